#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmsfl/data.hpp"
#include "pmsfl/privacy.hpp"
#include "pmsfl/protocol.hpp"

#include <nlohmann/json_fwd.hpp>

namespace pmsfl::harness {

enum class PartitionType { kDirichlet, kPersonalized };

struct PartitionSpec {
  PartitionType type = PartitionType::kDirichlet;
  double alpha = 0.3;
  std::size_t classes_per_client = 2;
};

struct AttackSpec {
  std::size_t trials = 100;
  std::size_t budget = 2000;
  double step = 0.05;
  std::vector<std::size_t> victim_dims = {8, 8};
  bool linear = true;
  double theta = 0.5;
  std::string knowledge = "probabilistic";
  std::vector<std::string> arms = {"pm-sfl", "splitfed"};
  std::vector<std::size_t> input_shape;  // non-empty enables PSNR
  std::uint64_t victim_seed = 0;
};

// Fully resolved experiment configuration: mode defaults applied, explicit
// overrides folded in, and everything validated.
struct RunConfig {
  std::uint64_t seed = 1;
  std::string mode = "pm-sfl";
  std::size_t clients = 20;
  double participation = 0.5;
  std::size_t rounds = 200;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  protocol::OptimizerKind optimizer = protocol::OptimizerKind::kSgd;
  std::vector<std::size_t> widths = {16, 32, 32, 16};
  std::vector<std::size_t> split_tiers = {2};
  std::size_t eval_interval = 10;
  protocol::EvalMaskMode eval_mask = protocol::EvalMaskMode::kMap;
  double train_fraction = 0.9;
  double theta_clamp = 0.01;
  bool personalization = false;
  double warmup_fraction = 0.1;
  double ratio_cap = 0.5;
  bool compensation = false;
  protocol::TrainingMode training = protocol::TrainingMode::kMasks;
  protocol::UplinkFormat uplink = protocol::UplinkFormat::kBinaryMask;
  protocol::TopMode top_mode = protocol::TopMode::kWeights;
  privacy::PrivacySpec privacy;
  data::DatasetSpec dataset;
  PartitionSpec partition;
  AttackSpec attack;
};

RunConfig parse_config(const nlohmann::json& j);
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::string& path);
nlohmann::json config_to_json(const RunConfig& cfg);

struct RunOutputs {
  std::string metrics_csv_path;
  std::string summary_json_path;
  std::string summary_json;  // same document, serialized
};

// Executes the configured number of rounds in the selected mode, writing
// metrics.csv and summary.json under out_dir (created if missing). With
// dump_masks, binary uplink masks land under out_dir/masks/.
RunOutputs run_experiment(const RunConfig& cfg, const std::string& out_dir,
                          bool dump_masks = false);

struct AttackOutputs {
  std::string trials_csv_path;
  std::string summary_json_path;
  std::string summary_json;
};

// Per-arm reconstruction trials against the configured victim; writes
// attack_trials.csv and attack_summary.json under out_dir.
AttackOutputs run_attack_eval(const RunConfig& cfg, const std::string& out_dir);

// Per-client sample counts and class histograms for the configured
// dataset + partition, as a JSON document.
std::string partition_preview(const RunConfig& cfg);

}  // namespace pmsfl::harness
