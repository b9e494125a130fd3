#include "deepsitar/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string_view>

namespace deepsitar::io {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  double v = 0.0;
  const auto* first = text.data();
  const auto* last = text.data() + text.size();
  const auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last)
    throw FormatError("not a number: '" + std::string(text) + "'");
  return v;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

namespace {

std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view field = line.substr(start, comma == std::string_view::npos ? line.npos
                                                                                : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    fields.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

long parse_long(std::string_view text) {
  long v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw FormatError("not an integer: '" + std::string(text) + "'");
  return v;
}

}  // namespace

void write_dataset(const GrowthDataset& data, std::ostream& out) {
  const bool truth = data.has_truth();
  out << "id,age,y,split";
  if (truth) out << ",a1,b1,c1";
  out << '\n';
  for (const auto& ind : data.individuals) {
    for (std::size_t j = 0; j < data.times.size(); ++j) {
      out << ind.id << ',' << format_double(data.times[j]) << ',' << format_double(ind.y[j]) << ','
          << to_string(ind.split);
      if (truth) {
        out << ',' << format_double(ind.truth->a1) << ',' << format_double(ind.truth->b1) << ','
            << format_double(ind.truth->c1);
      }
      out << '\n';
    }
  }
}

GrowthDataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw FormatError("dataset: empty file");
  const auto header = split_csv_line(line);
  std::map<std::string, std::size_t, std::less<>> column;
  for (std::size_t c = 0; c < header.size(); ++c) column.emplace(std::string(header[c]), c);
  for (const char* required : {"id", "age", "y"})
    if (!column.contains(required))
      throw FormatError(std::string("dataset: missing column '") + required + "'");
  const bool has_split = column.contains("split");
  const bool has_truth = column.contains("a1") && column.contains("b1") && column.contains("c1");

  GrowthDataset data;
  std::map<long, std::size_t> position;
  std::vector<std::vector<double>> ages;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw FormatError("dataset line " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields");
    const long id = parse_long(fields[column.find("id")->second]);
    auto [it, inserted] = position.emplace(id, data.individuals.size());
    if (inserted) {
      data.individuals.push_back({});
      ages.emplace_back();
      data.individuals.back().id = id;
    } else if (it->second + 1 != data.individuals.size()) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": rows of individual " +
                        std::to_string(id) + " are not contiguous");
    }
    Individual& ind = data.individuals[it->second];
    ages[it->second].push_back(parse_double(fields[column.find("age")->second]));
    ind.y.push_back(parse_double(fields[column.find("y")->second]));
    if (has_split) {
      try {
        ind.split = split_from_string(fields[column.find("split")->second]);
      } catch (const std::invalid_argument& e) {
        throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (has_truth) {
      ind.truth = RandomEffects{parse_double(fields[column.find("a1")->second]),
                                parse_double(fields[column.find("b1")->second]),
                                parse_double(fields[column.find("c1")->second])};
    }
  }
  if (data.individuals.empty()) throw FormatError("dataset: no rows");
  data.times = ages.front();
  for (std::size_t i = 1; i < ages.size(); ++i)
    if (ages[i] != data.times)
      throw FormatError("dataset: individual " + std::to_string(data.individuals[i].id) +
                        " is not measured at the common ages (balanced design required)");
  try {
    data.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  return data;
}

void save_dataset(const GrowthDataset& data, const std::filesystem::path& path) {
  std::ostringstream out;
  write_dataset(data, out);
  write_text(path, out.str());
}

GrowthDataset load_dataset(const std::filesystem::path& path) {
  std::istringstream in(read_text(path));
  return read_dataset(in);
}

namespace {

json matrix_to_json(const SmallMatrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

SmallMatrix matrix_from_json(const json& j) {
  if (!j.is_array() || j.empty()) throw FormatError("matrix must be a nonempty array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = j.front().size();
  std::vector<double> entries;
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != cols) throw FormatError("matrix rows differ in length");
    for (const auto& v : row) entries.push_back(v.get<double>());
  }
  return SmallMatrix(rows, cols, std::move(entries));
}

json fixed_to_json(const FixedEffects& fx) {
  return {{"a0", fx.a0}, {"b0", fx.b0}, {"c0", fx.c0}};
}

FixedEffects fixed_from_json(const json& j) {
  return {j.at("a0").get<double>(), j.at("b0").get<double>(), j.at("c0").get<double>()};
}

json basis_to_json(const BSplineBasis& b) {
  return {{"domain_lo", b.domain_lo()}, {"domain_hi", b.domain_hi()}, {"n_seg", b.segments()},
          {"degree", b.degree()},       {"margin", b.margin()}};
}

BSplineBasis basis_from_json(const json& j) {
  return make_basis(j.at("domain_lo").get<double>(), j.at("domain_hi").get<double>(),
                    j.at("n_seg").get<int>(), j.at("degree").get<int>(),
                    j.at("margin").get<double>());
}

template <class F>
auto with_schema_errors(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string(what) + ": " + e.what());
  }
}

void check_format(const json& j, std::string_view format) {
  if (j.value("format", std::string()) != format)
    throw FormatError("expected a '" + std::string(format) + "' document");
  if (j.value("version", 0) != kModelFormatVersion)
    throw FormatError("unsupported " + std::string(format) + " version");
}

}  // namespace

json truth_to_json(const TruthParams& truth) {
  return {{"format", "deepsitar-truth"},
          {"version", kModelFormatVersion},
          {"basis", basis_to_json(truth.decoder.basis())},
          {"alpha", truth.decoder.alpha()},
          {"fixed", fixed_to_json(truth.decoder.fixed())},
          {"lambda", matrix_to_json(truth.lambda)},
          {"noise_var", truth.noise_var}};
}

TruthParams truth_from_json(const json& j) {
  return with_schema_errors("truth config", [&] {
    check_format(j, "deepsitar-truth");
    SitarDecoder decoder(basis_from_json(j.at("basis")), j.at("alpha").get<std::vector<double>>(),
                         fixed_from_json(j.at("fixed")));
    SmallMatrix lambda = matrix_from_json(j.at("lambda"));
    if (lambda.rows() != 3 || lambda.cols() != 3) throw FormatError("lambda must be 3x3");
    try {
      cholesky_spd(lambda);
    } catch (const NotPositiveDefinite&) {
      throw FormatError("truth config: lambda is not positive definite");
    }
    const double noise_var = j.at("noise_var").get<double>();
    if (!(noise_var > 0.0)) throw FormatError("truth config: noise_var must be positive");
    return TruthParams{std::move(decoder), std::move(lambda), noise_var};
  });
}

void save_truth(const TruthParams& truth, const std::filesystem::path& path) {
  write_text(path, truth_to_json(truth).dump(2) + "\n");
}

TruthParams load_truth(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("truth config '" + path.string() + "': " + e.what());
  }
  return truth_from_json(j);
}

std::string truth_hash(const TruthParams& truth) {
  const std::string text = truth_to_json(truth).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

json config_to_json(const TrainConfig& c) {
  json j = {{"epochs", c.epochs},
            {"learning_rate", c.learning_rate},
            {"batch_size", c.batch_size},
            {"jitter", c.jitter},
            {"penalty_on", c.penalty_on},
            {"penalty_warmup", c.penalty_warmup},
            {"seed", c.seed},
            {"hidden", c.hidden},
            {"n_seg", c.n_seg},
            {"degree", c.degree},
            {"margin", c.margin}};
  j["gradient_clip"] = c.gradient_clip ? json(*c.gradient_clip) : json(nullptr);
  j["final_learning_rate"] =
      c.final_learning_rate ? json(*c.final_learning_rate) : json(nullptr);
  return j;
}

TrainConfig config_from_json(const json& j) {
  TrainConfig c;
  c.epochs = j.at("epochs").get<std::size_t>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.jitter = j.at("jitter").get<double>();
  c.penalty_on = j.at("penalty_on").get<bool>();
  c.penalty_warmup = j.at("penalty_warmup").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  c.n_seg = j.at("n_seg").get<int>();
  c.degree = j.at("degree").get<int>();
  c.margin = j.at("margin").get<double>();
  if (j.contains("final_learning_rate") && !j.at("final_learning_rate").is_null())
    c.final_learning_rate = j.at("final_learning_rate").get<double>();
  const auto& clip = j.at("gradient_clip");
  if (clip.is_null())
    c.gradient_clip.reset();
  else
    c.gradient_clip = clip.get<double>();
  return c;
}

json model_to_json(const TrainedModel& model) {
  json layers = json::array();
  for (const auto& layer : model.encoder.layers()) {
    layers.push_back({{"activation", std::string(to_string(layer.activation))},
                      {"weights", matrix_to_json(layer.weights)},
                      {"bias", layer.bias}});
  }
  const auto& basis = model.decoder.basis();
  json decoder = basis_to_json(basis);
  decoder["knots"] = basis.knots();
  decoder["alpha"] = model.decoder.alpha();
  decoder["fixed"] = fixed_to_json(model.decoder.fixed());

  return {{"format", "deepsitar-model"},
          {"version", kModelFormatVersion},
          {"encoder", {{"dims", model.encoder.dims()}, {"layers", layers}}},
          {"standardizer", {{"mean", model.standardizer.mean}, {"sd", model.standardizer.sd}}},
          {"decoder", decoder},
          {"covariance",
           {{"lambda", matrix_to_json(model.covariance.lambda)},
            {"inverse", matrix_to_json(model.covariance.inverse)},
            {"epoch", model.covariance.epoch}}},
          {"config", config_to_json(model.config)},
          {"truth_hash", model.truth_hash.empty() ? json(nullptr) : json(model.truth_hash)}};
}

TrainedModel model_from_json(const json& j) {
  return with_schema_errors("model file", [&] {
    check_format(j, "deepsitar-model");
    std::vector<DenseLayer> layers;
    for (const auto& lj : j.at("encoder").at("layers")) {
      DenseLayer layer;
      layer.activation = activation_from_string(lj.at("activation").get<std::string>());
      layer.weights = matrix_from_json(lj.at("weights"));
      layer.bias = lj.at("bias").get<std::vector<double>>();
      layers.push_back(std::move(layer));
    }
    EncoderNet encoder(std::move(layers));
    if (encoder.dims() != j.at("encoder").at("dims").get<std::vector<std::size_t>>())
      throw FormatError("model file: encoder dims do not match its layers");

    Standardizer scaler{j.at("standardizer").at("mean").get<std::vector<double>>(),
                        j.at("standardizer").at("sd").get<std::vector<double>>()};
    if (scaler.mean.size() != encoder.input_dim() || scaler.sd.size() != encoder.input_dim())
      throw FormatError("model file: standardizer size does not match the encoder input");

    const json& dj = j.at("decoder");
    BSplineBasis basis = basis_from_json(dj);
    if (basis.knots() != dj.at("knots").get<std::vector<double>>())
      throw FormatError("model file: stored knots do not match the basis description");
    SitarDecoder decoder(std::move(basis), dj.at("alpha").get<std::vector<double>>(),
                         fixed_from_json(dj.at("fixed")));

    CovarianceEstimate cov;
    cov.lambda = matrix_from_json(j.at("covariance").at("lambda"));
    cov.inverse = matrix_from_json(j.at("covariance").at("inverse"));
    cov.epoch = j.at("covariance").at("epoch").get<std::size_t>();

    std::string hash;
    if (j.contains("truth_hash") && !j.at("truth_hash").is_null())
      hash = j.at("truth_hash").get<std::string>();
    return TrainedModel{std::move(encoder), std::move(scaler), std::move(decoder), std::move(cov),
                        config_from_json(j.at("config")), std::move(hash)};
  });
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
  write_text(path, model_to_json(model).dump(1) + "\n");
}

TrainedModel load_model(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError("model file '" + path.string() + "': " + e.what());
  }
  return model_from_json(j);
}

void write_history(const TrainHistory& history, std::ostream& out, bool has_validation) {
  out << "epoch,train_loss,train_log_loss,val_loss,val_log_loss,ood_count\n";
  for (const auto& r : history.records) {
    out << r.epoch << ',' << format_double(r.train_loss) << ','
        << format_double(std::log(r.train_loss)) << ',';
    if (has_validation)
      out << format_double(r.val_loss) << ',' << format_double(std::log(r.val_loss));
    else
      out << "nan,nan";
    out << ',' << r.ood_count << '\n';
  }
}

void save_history(const TrainHistory& history, const std::filesystem::path& path,
                  bool has_validation) {
  std::ostringstream out;
  write_history(history, out, has_validation);
  write_text(path, out.str());
}

namespace {

json mse_to_json(const MseSummary& s) {
  return {{"mean", s.mean}, {"sd", s.sd}, {"ids", s.ids}, {"per_individual", s.per_individual}};
}

json array3(const std::array<double, 3>& a) { return {{"a1", a[0]}, {"b1", a[1]}, {"c1", a[2]}}; }

}  // namespace

json report_to_json(const FitReport& report) {
  json splits = json::array();
  for (const auto& s : report.splits) {
    json sj = {{"split", std::string(to_string(s.split))},
               {"individuals", s.individuals},
               {"loss", s.loss},
               {"log_loss", std::log(s.loss)},
               {"mse", mse_to_json(s.mse)}};
    sj["curve_mse"] = s.curve_mse ? mse_to_json(*s.curve_mse) : json(nullptr);
    if (s.correlation) {
      json cj = array3(s.correlation->r);
      cj["degenerate"] = s.correlation->degenerate;
      sj["effect_correlation"] = cj;
    } else {
      sj["effect_correlation"] = nullptr;
    }
    splits.push_back(sj);
  }
  json variance = {{"available", report.variance_differences.has_value()},
                   {"sigma2_hat", array3(report.sigma2_hat)}};
  if (report.variance_differences) {
    variance["sigma2_true"] = array3(*report.sigma2_true);
    variance["abs_diff"] = array3(*report.variance_differences);
  }
  return {{"format", "deepsitar-report"},
          {"version", kModelFormatVersion},
          {"n_individuals", report.n_individuals},
          {"n_seg", report.n_seg},
          {"out_of_domain", report.out_of_domain},
          {"splits", splits},
          {"variance_recovery", variance}};
}

void write_summary_table(const FitReport& report, std::ostream& out, bool header) {
  if (header) out << "N,n_seg,split,metric,value\n";
  auto row = [&](std::string_view split, std::string_view metric, double value) {
    out << report.n_individuals << ',' << report.n_seg << ',' << split << ',' << metric << ','
        << format_double(value) << '\n';
  };
  for (const auto& s : report.splits) {
    const auto name = to_string(s.split);
    row(name, "log_loss", std::log(s.loss));
    row(name, "mean_mse", s.mse.mean);
    row(name, "sd_mse", s.mse.sd);
    if (s.curve_mse) {
      row(name, "mean_curve_mse", s.curve_mse->mean);
      row(name, "sd_curve_mse", s.curve_mse->sd);
    }
    if (s.correlation) {
      row(name, "corr_a1", s.correlation->r[0]);
      row(name, "corr_b1", s.correlation->r[1]);
      row(name, "corr_c1", s.correlation->r[2]);
    }
  }
  if (report.variance_differences) {
    row("train", "abs_diff_sigma2_a", (*report.variance_differences)[0]);
    row("train", "abs_diff_sigma2_b", (*report.variance_differences)[1]);
    row("train", "abs_diff_sigma2_c", (*report.variance_differences)[2]);
  }
}

}  // namespace deepsitar::io
