#include "deepsitar/cli.hpp"

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"

#include "deepsitar/evaluator.hpp"
#include "deepsitar/io.hpp"
#include "deepsitar/simulator.hpp"
#include "deepsitar/trainer.hpp"

namespace deepsitar::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::vector<double> parse_number_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(io::parse_double(item));
    } catch (const io::FormatError&) {
      throw UsageError("not a number in list: '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list");
  return out;
}

std::vector<std::size_t> parse_count_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (double v : parse_number_list(text)) {
    if (!(v >= 1.0) || v != static_cast<double>(static_cast<std::size_t>(v)))
      throw UsageError("expected positive integers, got '" + text + "'");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

// "lo:hi:count" or an explicit comma separated list.
std::vector<double> parse_times(const std::string& text) {
  if (text.find(':') == std::string::npos) return parse_number_list(text);
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ':')) parts.push_back(item);
  if (parts.size() != 3) throw UsageError("--times expects lo:hi:count");
  double lo = 0.0;
  double hi = 0.0;
  try {
    lo = io::parse_double(parts[0]);
    hi = io::parse_double(parts[1]);
  } catch (const io::FormatError& e) {
    throw UsageError(std::string("--times: ") + e.what());
  }
  const auto count = parse_count_list(parts[2]).front();
  if (count == 1) return {lo};
  if (!(hi > lo)) throw UsageError("--times: need hi > lo");
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k)
    out[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  out.back() = hi;
  return out;
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("DEEPSITAR_SEED")) {
    std::uint64_t v = 0;
    const std::string_view s(env);
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
      throw UsageError("DEEPSITAR_SEED is not an unsigned integer: '" + std::string(s) + "'");
    return v;
  }
  return 0;
}

fs::path truth_sidecar(const fs::path& dataset) {
  fs::path p = dataset;
  return p.replace_extension(".truth.json");
}

TruthParams resolve_truth(const std::string& spec) {
  if (spec == "default") return default_truth();
  return io::load_truth(spec);
}

std::optional<TruthParams> sidecar_truth(const fs::path& dataset) {
  const fs::path side = truth_sidecar(dataset);
  if (!fs::exists(side)) return std::nullopt;
  return io::load_truth(side);
}

struct SimulateArgs {
  std::size_t n = 0;
  std::optional<std::uint64_t> seed;
  std::string truth = "default";
  double split = 0.8;
  std::size_t points = 20;
  std::string out;
};

struct TrainArgs {
  std::string data;
  int nseg = 10;
  std::size_t epochs = 22000;
  double lr = 1e-3;
  std::optional<double> lr_final;
  std::string dims;
  std::optional<std::uint64_t> seed;
  std::string mode = "autoencoder";
  std::size_t batch = 0;
  std::string clip = "10";
  bool no_penalty = false;
  std::size_t warmup = 50;
  std::string out;
  std::string history;
};

struct EvaluateArgs {
  std::string model;
  std::string data;
  std::string truth;
  std::string out;
  std::string table;
};

struct PredictArgs {
  std::string model;
  std::string input;
  std::string times;
  std::string out;
};

struct ReproduceArgs {
  std::string ns = "500,1000";
  std::string nsegs = "5,10,15";
  std::size_t epochs = 5000;
  double lr = 2e-3;
  std::optional<double> lr_final = 2e-5;
  std::size_t batch = 8;
  std::optional<std::uint64_t> seed;
  std::string truth = "default";
  std::string outdir = "reproduce";
};

TrainConfig make_config(const TrainArgs& a, std::size_t points) {
  TrainConfig c;
  c.epochs = a.epochs;
  c.learning_rate = a.lr;
  c.final_learning_rate = a.lr_final;
  c.batch_size = a.batch;
  c.n_seg = a.nseg;
  c.penalty_on = !a.no_penalty;
  c.penalty_warmup = a.warmup;
  c.seed = resolve_seed(a.seed);
  if (a.clip == "none") {
    c.gradient_clip.reset();
  } else {
    try {
      c.gradient_clip = io::parse_double(a.clip);
    } catch (const io::FormatError&) {
      throw UsageError("--clip expects a positive number or 'none'");
    }
  }
  if (!a.dims.empty()) {
    const auto dims = parse_count_list(a.dims);
    if (dims.size() < 2 || dims.front() != points || dims.back() != 3)
      throw UsageError("--dims must start with the " + std::to_string(points) +
                       " measurements per individual and end with 3");
    c.hidden.assign(dims.begin() + 1, dims.end() - 1);
  }
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

struct TrainOutcome {
  TrainedModel model;
  TrainHistory history;
};

TrainOutcome train_model(const GrowthDataset& data, const TrainConfig& config, bool supervised) {
  if (!supervised) {
    AutoencoderResult r = train_autoencoder(data, config);
    return {std::move(r.model), std::move(r.history)};
  }
  // The supervised network has no decoder of its own; the population curve
  // from initialization is stored alongside it.
  SupervisedResult r = train_supervised(data, config);
  TrainedModel model = initialize_model(data, config);
  model.encoder = std::move(r.encoder);
  model.standardizer = std::move(r.standardizer);
  model.covariance = std::move(r.covariance);
  return {std::move(model), std::move(r.history)};
}

int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  if (a.n < 2) throw UsageError("--n must be at least 2");
  if (!(a.split > 0.0 && a.split < 1.0)) throw UsageError("--split must lie in (0, 1)");
  if (a.points < 2) throw UsageError("--points must be at least 2");
  const TruthParams truth = resolve_truth(a.truth);
  SeededRng rng(resolve_seed(a.seed));
  const GrowthDataset data = simulate(a.n, truth, a.split, rng, a.points);
  io::save_dataset(data, a.out);
  io::save_truth(truth, truth_sidecar(a.out));
  out << "individuals " << data.individuals.size() << "\n"
      << "points_per_individual " << data.points_per_individual() << "\n"
      << "train " << data.count(Split::train) << "\n"
      << "validation " << data.count(Split::validation) << "\n"
      << "rows " << data.individuals.size() * data.points_per_individual() << "\n";
  return kOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  if (a.mode != "autoencoder" && a.mode != "supervised")
    throw UsageError("--mode must be autoencoder or supervised");
  const GrowthDataset data = io::load_dataset(a.data);
  const TrainConfig config = make_config(a, data.points_per_individual());
  TrainOutcome r = train_model(data, config, a.mode == "supervised");
  if (const auto truth = sidecar_truth(a.data)) r.model.truth_hash = io::truth_hash(*truth);

  io::save_model(r.model, a.out);
  const std::string history = a.history.empty() ? a.out + ".history.csv" : a.history;
  io::save_history(r.history, history, data.count(Split::validation) > 0);

  out << "parameters " << r.model.parameter_count() << "\n"
      << "basis_functions " << r.model.decoder.basis().size() << "\n";
  if (!r.history.records.empty()) {
    const EpochRecord& last = r.history.records.back();
    out << "final_train_loss " << io::format_double(last.train_loss) << "\n";
    if (data.count(Split::validation) > 0)
      out << "final_val_loss " << io::format_double(last.val_loss) << "\n";
  }
  return kOk;
}

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out) {
  const TrainedModel model = io::load_model(a.model);
  const GrowthDataset data = io::load_dataset(a.data);
  if (data.points_per_individual() != model.encoder.input_dim())
    throw DimMismatch("model expects " + std::to_string(model.encoder.input_dim()) +
                      " measurements per individual, dataset has " +
                      std::to_string(data.points_per_individual()));
  std::optional<TruthParams> truth =
      a.truth.empty() ? sidecar_truth(a.data) : std::optional<TruthParams>(resolve_truth(a.truth));
  const FitReport report = build_report(model, data, truth ? &*truth : nullptr);
  io::write_text(a.out, io::report_to_json(report).dump(2) + "\n");
  if (!a.table.empty()) {
    std::ostringstream table;
    io::write_summary_table(report, table);
    io::write_text(a.table, table.str());
  }
  for (const auto& s : report.splits)
    out << to_string(s.split) << " mean_mse " << io::format_double(s.mse.mean) << "\n";
  out << "variance_recovery " << (report.variance_differences ? "available" : "unavailable")
      << "\n";
  return kOk;
}

int cmd_predict(const PredictArgs& a, std::ostream& out) {
  const TrainedModel model = io::load_model(a.model);
  const GrowthDataset input = io::load_dataset(a.input);
  if (input.points_per_individual() != model.encoder.input_dim())
    throw DimMismatch("model expects " + std::to_string(model.encoder.input_dim()) +
                      " measurements per individual, input has " +
                      std::to_string(input.points_per_individual()));
  const std::vector<double> times = a.times.empty() ? input.times : parse_times(a.times);

  std::ostringstream csv;
  csv << "id,time,yhat,a1,b1,c1\n";
  std::size_t ood = 0;
  for (const auto& ind : input.individuals) {
    const Prediction p = predict_new_individual(model, ind.y, times);
    ood += p.out_of_domain;
    for (std::size_t k = 0; k < times.size(); ++k) {
      csv << ind.id << ',' << io::format_double(times[k]) << ',' << io::format_double(p.curve[k])
          << ',' << io::format_double(p.effects.a1) << ',' << io::format_double(p.effects.b1)
          << ',' << io::format_double(p.effects.c1) << '\n';
    }
  }
  io::write_text(a.out, csv.str());
  out << "individuals " << input.individuals.size() << "\n"
      << "times " << times.size() << "\n"
      << "out_of_domain " << ood << "\n";
  return kOk;
}

int cmd_reproduce(const ReproduceArgs& a, std::ostream& out) {
  const auto ns = parse_count_list(a.ns);
  const auto nsegs = parse_count_list(a.nsegs);
  const TruthParams truth = resolve_truth(a.truth);
  const std::uint64_t seed = resolve_seed(a.seed);
  const fs::path dir(a.outdir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io::IoError("cannot create '" + dir.string() + "': " + ec.message());

  std::ostringstream summary;
  bool header = true;
  for (std::size_t n : ns) {
    SeededRng rng(seed + n);
    const GrowthDataset data = simulate(n, truth, 0.8, rng);
    const fs::path data_path = dir / ("data_N" + std::to_string(n) + ".csv");
    io::save_dataset(data, data_path);
    io::save_truth(truth, truth_sidecar(data_path));
    for (std::size_t nseg : nsegs) {
      TrainArgs ta;
      ta.nseg = static_cast<int>(nseg);
      ta.epochs = a.epochs;
      ta.lr = a.lr;
      ta.lr_final = a.lr_final;
      ta.batch = a.batch;
      ta.seed = seed;
      const TrainConfig config = make_config(ta, data.points_per_individual());
      TrainOutcome r = train_model(data, config, false);
      r.model.truth_hash = io::truth_hash(truth);

      const std::string stem = "N" + std::to_string(n) + "_nseg" + std::to_string(nseg);
      io::save_model(r.model, dir / (stem + ".model.json"));
      io::save_history(r.history, dir / (stem + ".history.csv"));
      const FitReport report = build_report(r.model, data, &truth);
      io::write_text(dir / (stem + ".report.json"), io::report_to_json(report).dump(2) + "\n");
      io::write_summary_table(report, summary, header);
      header = false;

      out << stem;
      for (const auto& s : report.splits)
        out << ' ' << to_string(s.split) << "_mse=" << io::format_double(s.mse.mean);
      out << '\n';
    }
  }
  io::write_text(dir / "summary.csv", summary.str());
  return kOk;
}

int report_error(std::ostream& err, int code, const std::string& what) {
  err << "error: " << what << "\n";
  return code;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Shape-invariant growth curve autoencoder", "deepsitar"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "Simulate a balanced growth cohort");
  s->add_option("--n", sim.n, "Number of individuals")->required();
  s->add_option("--seed", sim.seed, "RNG seed (default: $DEEPSITAR_SEED or 0)");
  s->add_option("--truth", sim.truth, "'default' or a truth config JSON path");
  s->add_option("--split", sim.split, "Training fraction");
  s->add_option("--points", sim.points, "Measurements per individual");
  s->add_option("--out", sim.out, "Dataset CSV to write")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a dataset");
  t->add_option("--data", tr.data, "Dataset CSV")->required();
  t->add_option("--nseg", tr.nseg, "Spline segments");
  t->add_option("--epochs", tr.epochs, "Training epochs");
  t->add_option("--lr", tr.lr, "Learning rate");
  t->add_option("--lr-final", tr.lr_final, "Geometric decay target for the learning rate");
  t->add_option("--dims", tr.dims, "Encoder layer sizes, e.g. 20,30,30,3");
  t->add_option("--seed", tr.seed, "Initialization seed (default: $DEEPSITAR_SEED or 0)");
  t->add_option("--mode", tr.mode, "autoencoder or supervised");
  t->add_option("--batch", tr.batch, "Minibatch size; 0 for full batch");
  t->add_option("--clip", tr.clip, "Gradient norm clip or 'none'");
  t->add_flag("--no-penalty", tr.no_penalty, "Drop the covariance penalty");
  t->add_option("--warmup", tr.warmup, "Epochs before the penalty switches on");
  t->add_option("--out", tr.out, "Model JSON to write")->required();
  t->add_option("--history", tr.history, "History CSV (default: <out>.history.csv)");

  EvaluateArgs ev;
  auto* e = app.add_subcommand("evaluate", "Write a fit report");
  e->add_option("--model", ev.model, "Model JSON")->required();
  e->add_option("--data", ev.data, "Dataset CSV")->required();
  e->add_option("--truth", ev.truth, "'default' or truth JSON (default: dataset sidecar)");
  e->add_option("--out", ev.out, "Report JSON to write")->required();
  e->add_option("--table", ev.table, "Also write the long-format summary CSV");

  PredictArgs pr;
  auto* p = app.add_subcommand("predict", "Predict effects and curves for new individuals");
  p->add_option("--model", pr.model, "Model JSON")->required();
  p->add_option("--input", pr.input, "Measurements CSV (id,age,y)")->required();
  p->add_option("--times", pr.times, "lo:hi:count or a comma list (default: input ages)");
  p->add_option("--out", pr.out, "Predictions CSV to write")->required();

  ReproduceArgs re;
  auto* r = app.add_subcommand("reproduce", "Simulate, train and evaluate over an (N, n_seg) grid");
  r->add_option("--n", re.ns, "Comma list of cohort sizes");
  r->add_option("--nseg", re.nsegs, "Comma list of segment counts");
  r->add_option("--epochs", re.epochs, "Training epochs");
  r->add_option("--lr", re.lr, "Initial learning rate");
  r->add_option("--lr-final", re.lr_final, "Final learning rate");
  r->add_option("--batch", re.batch, "Minibatch size; 0 for full batch");
  r->add_option("--seed", re.seed, "Seed (default: $DEEPSITAR_SEED or 0)");
  r->add_option("--truth", re.truth, "'default' or a truth config JSON path");
  r->add_option("--outdir", re.outdir, "Output directory");

  std::vector<const char*> argv;
  argv.reserve(args.size());
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n" << "run with --help for usage\n";
    return kUsage;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_evaluate(ev, out);
    if (p->parsed()) return cmd_predict(pr, out);
    if (r->parsed()) return cmd_reproduce(re, out);
  } catch (const io::IoError& ex) {
    return report_error(err, kIo, ex.what());
  } catch (const io::FormatError& ex) {
    return report_error(err, kIo, ex.what());
  } catch (const DivergenceDetected& ex) {
    return report_error(err, kNumerical,
                        std::string(ex.what()) + " (try a smaller --lr or a gradient clip)");
  } catch (const std::invalid_argument& ex) {
    return report_error(err, kUsage, ex.what());
  } catch (const std::exception& ex) {
    return report_error(err, kNumerical, ex.what());
  }
  return kUsage;
}

}  // namespace deepsitar::cli
