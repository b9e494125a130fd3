#pragma once

#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "deepsitar/evaluator.hpp"
#include "deepsitar/simulator.hpp"
#include "deepsitar/trainer.hpp"

namespace deepsitar::io {

/// Unreadable or unwritable file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// File readable but its contents do not follow the schema.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using nlohmann::json;

inline constexpr int kModelFormatVersion = 1;

/// Shortest text that parses back to the same double; locale independent.
std::string format_double(double v);
double parse_double(std::string_view text);

// Dataset: CSV with header id,age,y,split[,a1,b1,c1], one row per
// measurement, rows of an individual contiguous. The split column may be
// omitted when reading (everything is then "train").
void write_dataset(const GrowthDataset& data, std::ostream& out);
GrowthDataset read_dataset(std::istream& in);
void save_dataset(const GrowthDataset& data, const std::filesystem::path& path);
GrowthDataset load_dataset(const std::filesystem::path& path);

json truth_to_json(const TruthParams& truth);
TruthParams truth_from_json(const json& j);
void save_truth(const TruthParams& truth, const std::filesystem::path& path);
TruthParams load_truth(const std::filesystem::path& path);
/// FNV-1a 64 of the canonical JSON text, as 16 hex digits.
std::string truth_hash(const TruthParams& truth);

json config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const json& j);

json model_to_json(const TrainedModel& model);
TrainedModel model_from_json(const json& j);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

/// CSV header epoch,train_loss,train_log_loss,val_loss,val_log_loss,ood_count.
void write_history(const TrainHistory& history, std::ostream& out, bool has_validation = true);
void save_history(const TrainHistory& history, const std::filesystem::path& path,
                  bool has_validation = true);

json report_to_json(const FitReport& report);
/// CSV header N,n_seg,split,metric,value.
void write_summary_table(const FitReport& report, std::ostream& out, bool header = true);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace deepsitar::io
