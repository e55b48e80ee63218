#include "pmsfl/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "pmsfl/attack.hpp"
#include "pmsfl/error.hpp"
#include "pmsfl/wire.hpp"

namespace pmsfl::harness {

using nlohmann::json;

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return j.at(key).get<T>();
}

protocol::OptimizerKind optimizer_from_name(const std::string& name) {
  if (name == "sgd") return protocol::OptimizerKind::kSgd;
  if (name == "adam") return protocol::OptimizerKind::kAdam;
  fail(ErrorCode::kInvalidConfig, "unknown optimizer: " + name);
}

const char* optimizer_name(protocol::OptimizerKind k) {
  return k == protocol::OptimizerKind::kAdam ? "adam" : "sgd";
}

protocol::UplinkFormat uplink_from_name(const std::string& name) {
  if (name == "binary") return protocol::UplinkFormat::kBinaryMask;
  if (name == "float") return protocol::UplinkFormat::kFloatMask;
  if (name == "weights") return protocol::UplinkFormat::kWeights;
  fail(ErrorCode::kInvalidConfig, "unknown uplink format: " + name);
}

const char* uplink_name(protocol::UplinkFormat f) {
  switch (f) {
    case protocol::UplinkFormat::kBinaryMask: return "binary";
    case protocol::UplinkFormat::kFloatMask: return "float";
    case protocol::UplinkFormat::kWeights: return "weights";
  }
  return "unknown";
}

protocol::TopMode top_mode_from_name(const std::string& name) {
  if (name == "weights") return protocol::TopMode::kWeights;
  if (name == "masks") return protocol::TopMode::kMasks;
  fail(ErrorCode::kInvalidConfig, "unknown top_mode: " + name);
}

void parse_privacy(const json& j, privacy::PrivacySpec& spec) {
  if (j.contains("mechanism"))
    spec.mechanism = privacy::mechanism_from_name(j.at("mechanism"));
  spec.epsilon = get_or(j, "epsilon", spec.epsilon);
  spec.delta = get_or(j, "delta", spec.delta);
  spec.clip_bound = get_or(j, "clip_bound", spec.clip_bound);
  spec.clip_c = get_or(j, "clip_c", spec.clip_c);
  spec.sigma = get_or(j, "sigma", spec.sigma);
  spec.input_linf_bound = get_or(j, "input_linf_bound", spec.input_linf_bound);
}

void validate(const RunConfig& cfg) {
  if (cfg.clients == 0) fail(ErrorCode::kInvalidConfig, "clients must be >= 1");
  if (!(cfg.participation > 0.0 && cfg.participation <= 1.0))
    fail(ErrorCode::kInvalidConfig, "participation must be in (0, 1]");
  if (cfg.batch_size == 0)
    fail(ErrorCode::kInvalidConfig, "batch_size must be >= 1");
  if (cfg.widths.empty())
    fail(ErrorCode::kInvalidConfig, "widths must be non-empty");
  if (!(cfg.warmup_fraction >= 0.0 && cfg.warmup_fraction < 1.0))
    fail(ErrorCode::kInvalidConfig, "warmup_fraction must be in [0, 1)");
  if (!(cfg.ratio_cap >= 0.0 && cfg.ratio_cap <= 1.0))
    fail(ErrorCode::kInvalidConfig, "ratio_cap must be in [0, 1]");
  if (!(cfg.theta_clamp > 0.0 && cfg.theta_clamp < 0.5))
    fail(ErrorCode::kInvalidConfig, "theta_clamp must be in (0, 0.5)");
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction <= 1.0))
    fail(ErrorCode::kInvalidConfig, "train_fraction must be in (0, 1]");
  if (cfg.dataset.dim != cfg.widths.front())
    fail(ErrorCode::kInvalidConfig,
         "dataset dim must equal the first model width");
  const std::size_t total_layers = cfg.widths.size();
  for (std::size_t tier : cfg.split_tiers)
    if (tier < 1 || tier > total_layers)
      fail(ErrorCode::kInvalidConfig, "split tier outside [1, layers]");
  const bool weights = cfg.training == protocol::TrainingMode::kWeights;
  if (weights != (cfg.uplink == protocol::UplinkFormat::kWeights))
    fail(ErrorCode::kInvalidConfig,
         "weight training and the weights uplink format imply each other");
  if (!weights && cfg.top_mode == protocol::TopMode::kWeights) {
    const std::set<std::size_t> distinct(cfg.split_tiers.begin(),
                                         cfg.split_tiers.end());
    if (distinct.size() > 1)
      fail(ErrorCode::kInvalidConfig,
           "a weight-trained top model requires a uniform split depth; "
           "mixed depths need top_mode = masks");
  }
  if (cfg.compensation) {
    if (weights || cfg.top_mode != protocol::TopMode::kMasks)
      fail(ErrorCode::kInvalidConfig,
           "compensation requires mask training with a mask-trained top model");
  }
  if (cfg.personalization && weights)
    fail(ErrorCode::kInvalidConfig,
         "personalization applies to mask training only");
  if (cfg.privacy.mechanism == privacy::Mechanism::kGaussianUpdate &&
      cfg.optimizer != protocol::OptimizerKind::kSgd)
    fail(ErrorCode::kInvalidConfig,
         "gaussian-update mechanism requires the sgd optimizer");
}

}  // namespace

RunConfig parse_config(const json& j) {
  RunConfig cfg;
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed);
  cfg.mode = get_or<std::string>(j, "mode", cfg.mode);
  cfg.clients = get_or<std::size_t>(j, "clients", cfg.clients);
  cfg.participation = get_or(j, "participation", cfg.participation);
  cfg.rounds = get_or<std::size_t>(j, "rounds", cfg.rounds);
  cfg.local_epochs = get_or<std::size_t>(j, "local_epochs", cfg.local_epochs);
  cfg.batch_size = get_or<std::size_t>(j, "batch_size", cfg.batch_size);
  cfg.lr = get_or(j, "lr", cfg.lr);
  cfg.optimizer =
      optimizer_from_name(get_or<std::string>(j, "optimizer", "sgd"));
  cfg.widths = get_or(j, "widths", cfg.widths);
  cfg.split_tiers = get_or(j, "split_tiers", cfg.split_tiers);
  cfg.eval_interval = get_or<std::size_t>(j, "eval_interval", cfg.eval_interval);
  cfg.eval_mask = get_or<std::string>(j, "eval_mask", "map") == "sample"
                      ? protocol::EvalMaskMode::kSample
                      : protocol::EvalMaskMode::kMap;
  cfg.train_fraction = get_or(j, "train_fraction", cfg.train_fraction);
  cfg.theta_clamp = get_or(j, "theta_clamp", cfg.theta_clamp);

  if (j.contains("personalization") && j.at("personalization").is_object()) {
    const json& p = j.at("personalization");
    cfg.warmup_fraction = get_or(p, "warmup_fraction", cfg.warmup_fraction);
    cfg.ratio_cap = get_or(p, "ratio_cap", cfg.ratio_cap);
  }
  if (j.contains("dataset") && j.at("dataset").is_object()) {
    const json& d = j.at("dataset");
    if (d.contains("kind"))
      cfg.dataset.kind = data::dataset_kind_from_name(d.at("kind"));
    cfg.dataset.classes = get_or<std::size_t>(d, "classes", cfg.dataset.classes);
    cfg.dataset.dim = get_or<std::size_t>(d, "dim", cfg.dataset.dim);
    cfg.dataset.samples_per_class =
        get_or<std::size_t>(d, "samples_per_class", cfg.dataset.samples_per_class);
    cfg.dataset.noise = get_or(d, "noise", cfg.dataset.noise);
    if (d.contains("partition") && d.at("partition").is_object()) {
      const json& p = d.at("partition");
      const std::string type = get_or<std::string>(p, "type", "dirichlet");
      if (type == "dirichlet") {
        cfg.partition.type = PartitionType::kDirichlet;
        cfg.partition.alpha = get_or(p, "alpha", cfg.partition.alpha);
        if (!(cfg.partition.alpha > 0.0))
          fail(ErrorCode::kInvalidConfig, "dirichlet alpha must be positive");
      } else if (type == "personalized") {
        cfg.partition.type = PartitionType::kPersonalized;
        cfg.partition.classes_per_client = get_or<std::size_t>(
            p, "classes_per_client", cfg.partition.classes_per_client);
      } else {
        fail(ErrorCode::kInvalidConfig, "unknown partition type: " + type);
      }
    }
  }
  cfg.dataset.seed = cfg.seed;

  // Mode defaults, then explicit overrides.
  std::set<std::size_t> distinct(cfg.split_tiers.begin(),
                                 cfg.split_tiers.end());
  const bool mixed_depths = distinct.size() > 1;
  if (cfg.mode == "pm-sfl") {
    cfg.training = protocol::TrainingMode::kMasks;
    cfg.uplink = protocol::UplinkFormat::kBinaryMask;
    cfg.personalization = true;
    cfg.compensation = mixed_depths;
    cfg.top_mode = cfg.compensation ? protocol::TopMode::kMasks
                                    : protocol::TopMode::kWeights;
  } else if (cfg.mode == "splitfed" || cfg.mode == "splitfed-dp") {
    cfg.training = protocol::TrainingMode::kWeights;
    cfg.uplink = protocol::UplinkFormat::kWeights;
    cfg.top_mode = protocol::TopMode::kWeights;
    cfg.personalization = false;
    cfg.compensation = false;
    if (cfg.mode == "splitfed-dp") {
      cfg.privacy.mechanism = privacy::Mechanism::kLaplaceForward;
      cfg.privacy.epsilon = 0.1;
    }
  } else if (cfg.mode == "splitfed-pm") {
    cfg.training = protocol::TrainingMode::kMasks;
    cfg.uplink = protocol::UplinkFormat::kFloatMask;
    cfg.personalization = false;
    cfg.compensation = false;
    cfg.top_mode = protocol::TopMode::kWeights;
  } else {
    fail(ErrorCode::kInvalidConfig, "unknown mode: " + cfg.mode);
  }

  if (j.contains("privacy") && j.at("privacy").is_object())
    parse_privacy(j.at("privacy"), cfg.privacy);
  if (j.contains("personalization") && j.at("personalization").is_object()) {
    const json& p = j.at("personalization");
    if (p.contains("enabled") && !p.at("enabled").is_null())
      cfg.personalization = p.at("enabled").get<bool>();
  }
  if (j.contains("compensation") && !j.at("compensation").is_null())
    cfg.compensation = j.at("compensation").get<bool>();
  if (j.contains("uplink") && !j.at("uplink").is_null())
    cfg.uplink = uplink_from_name(j.at("uplink"));
  if (j.contains("top_mode") && !j.at("top_mode").is_null())
    cfg.top_mode = top_mode_from_name(j.at("top_mode"));
  if (cfg.compensation && cfg.training == protocol::TrainingMode::kMasks &&
      !j.contains("top_mode"))
    cfg.top_mode = protocol::TopMode::kMasks;

  if (j.contains("attack") && j.at("attack").is_object()) {
    const json& a = j.at("attack");
    cfg.attack.trials = get_or<std::size_t>(a, "trials", cfg.attack.trials);
    cfg.attack.budget = get_or<std::size_t>(a, "budget", cfg.attack.budget);
    cfg.attack.step = get_or(a, "step", cfg.attack.step);
    cfg.attack.victim_dims = get_or(a, "victim_dims", cfg.attack.victim_dims);
    cfg.attack.linear = get_or(a, "linear", cfg.attack.linear);
    cfg.attack.theta = get_or(a, "theta", cfg.attack.theta);
    cfg.attack.knowledge =
        get_or<std::string>(a, "knowledge", cfg.attack.knowledge);
    cfg.attack.arms = get_or(a, "arms", cfg.attack.arms);
    cfg.attack.input_shape = get_or(a, "input_shape", cfg.attack.input_shape);
    cfg.attack.victim_seed =
        get_or<std::uint64_t>(a, "victim_seed", cfg.attack.victim_seed);
  }

  validate(cfg);
  return cfg;
}

RunConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kInvalidConfig, std::string("config parse error: ") +
                                        e.what());
  }
  return parse_config(j);
}

RunConfig parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIo, "cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_text(text);
}

json config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["mode"] = cfg.mode;
  j["clients"] = cfg.clients;
  j["participation"] = cfg.participation;
  j["rounds"] = cfg.rounds;
  j["local_epochs"] = cfg.local_epochs;
  j["batch_size"] = cfg.batch_size;
  j["lr"] = cfg.lr;
  j["optimizer"] = optimizer_name(cfg.optimizer);
  j["widths"] = cfg.widths;
  j["split_tiers"] = cfg.split_tiers;
  j["eval_interval"] = cfg.eval_interval;
  j["eval_mask"] =
      cfg.eval_mask == protocol::EvalMaskMode::kSample ? "sample" : "map";
  j["train_fraction"] = cfg.train_fraction;
  j["theta_clamp"] = cfg.theta_clamp;
  j["training"] =
      cfg.training == protocol::TrainingMode::kMasks ? "masks" : "weights";
  j["uplink"] = uplink_name(cfg.uplink);
  j["top_mode"] =
      cfg.top_mode == protocol::TopMode::kMasks ? "masks" : "weights";
  j["personalization"] = {{"enabled", cfg.personalization},
                          {"warmup_fraction", cfg.warmup_fraction},
                          {"ratio_cap", cfg.ratio_cap}};
  j["compensation"] = cfg.compensation;
  j["privacy"] = {{"mechanism", privacy::mechanism_name(cfg.privacy.mechanism)},
                  {"epsilon", cfg.privacy.epsilon},
                  {"delta", cfg.privacy.delta},
                  {"clip_bound", cfg.privacy.clip_bound},
                  {"clip_c", cfg.privacy.clip_c},
                  {"sigma", cfg.privacy.sigma},
                  {"input_linf_bound", cfg.privacy.input_linf_bound}};
  j["dataset"] = {{"kind", data::dataset_kind_name(cfg.dataset.kind)},
                  {"classes", cfg.dataset.classes},
                  {"dim", cfg.dataset.dim},
                  {"samples_per_class", cfg.dataset.samples_per_class},
                  {"noise", cfg.dataset.noise}};
  if (cfg.partition.type == PartitionType::kDirichlet)
    j["dataset"]["partition"] = {{"type", "dirichlet"},
                                 {"alpha", cfg.partition.alpha}};
  else
    j["dataset"]["partition"] = {
        {"type", "personalized"},
        {"classes_per_client", cfg.partition.classes_per_client}};
  j["attack"] = {{"trials", cfg.attack.trials},
                 {"budget", cfg.attack.budget},
                 {"step", cfg.attack.step},
                 {"victim_dims", cfg.attack.victim_dims},
                 {"linear", cfg.attack.linear},
                 {"theta", cfg.attack.theta},
                 {"knowledge", cfg.attack.knowledge},
                 {"arms", cfg.attack.arms},
                 {"input_shape", cfg.attack.input_shape},
                 {"victim_seed", cfg.attack.victim_seed}};
  return j;
}

namespace {

struct World {
  data::Dataset dataset;
  protocol::ServerState server;
  std::vector<protocol::ClientState> clients;
  protocol::ProtocolConfig pc;
};

World build_world(const RunConfig& cfg) {
  World world;
  world.dataset = data::synthetic_dataset(cfg.dataset);

  Rng rng_part = Rng::derive(cfg.seed, Rng::tag("partition"));
  std::vector<std::vector<std::size_t>> parts;
  if (cfg.partition.type == PartitionType::kDirichlet)
    parts = data::dirichlet_partition(world.dataset.labels, cfg.clients,
                                      cfg.partition.alpha, rng_part);
  else
    parts = data::personalized_partition(world.dataset.labels, cfg.clients,
                                         cfg.partition.classes_per_client,
                                         rng_part);

  std::vector<std::size_t> dims = cfg.widths;
  dims.push_back(world.dataset.classes);
  const std::size_t total_layers = dims.size() - 1;
  const bool mask_training = cfg.training == protocol::TrainingMode::kMasks;
  net::DenseStack model = protocol::build_mlp(
      dims, Rng::derive(cfg.seed, Rng::tag("model")).next_u64(),
      /*trainable=*/!mask_training);
  const std::size_t frozen_depth =
      cfg.top_mode == protocol::TopMode::kMasks
          ? total_layers
          : cfg.split_tiers.front();  // uniform when the top trains weights
  world.server = protocol::init_server(model, cfg.training, frozen_depth);

  std::map<compensation::ClientId, std::size_t> capacities;
  for (std::size_t i = 0; i < cfg.clients; ++i)
    capacities[i] = cfg.split_tiers[i % cfg.split_tiers.size()];
  const compensation::SplitAssignment splits =
      compensation::assign_splits(capacities, total_layers);

  for (std::size_t i = 0; i < cfg.clients; ++i) {
    protocol::ClientState client;
    client.id = i;
    client.split_depth = splits.depth_of(i);
    Rng rng_split = Rng::derive(cfg.seed, Rng::tag("split"), i);
    data::TrainTestSplit split =
        data::train_test_split(parts[i], cfg.train_fraction, rng_split);
    client.train_idx = std::move(split.train);
    client.test_idx = std::move(split.test);
    if (mask_training) {
      mask::Shapes bottom_shapes;
      for (std::size_t li = 0; li < client.split_depth; ++li)
        bottom_shapes.push_back({world.server.model.layers[li].rows,
                                 world.server.model.layers[li].cols});
      client.theta_local = mask::ProbMask::constant(bottom_shapes, 0.5);
      client.indicator =
          personalization::PersonalizationIndicator::zeros(bottom_shapes);
    }
    world.clients.push_back(std::move(client));
  }

  protocol::ProtocolConfig& pc = world.pc;
  pc.training = cfg.training;
  pc.uplink = cfg.uplink;
  pc.top_mode = cfg.top_mode;
  pc.personalization = cfg.personalization;
  pc.compensation = cfg.compensation;
  pc.optimizer = cfg.optimizer;
  pc.eval_mask = cfg.eval_mask;
  pc.lr = cfg.lr;
  pc.batch_size = cfg.batch_size;
  pc.local_epochs = cfg.local_epochs;
  pc.participants_per_round = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(
             cfg.participation * static_cast<double>(cfg.clients))));
  pc.total_rounds = cfg.rounds;
  pc.warmup_fraction = cfg.warmup_fraction;
  pc.ratio_cap = cfg.ratio_cap;
  pc.theta_clamp = cfg.theta_clamp;
  pc.privacy = cfg.privacy;
  pc.master_seed = cfg.seed;
  return world;
}

double mean_accuracy(const World& world,
                     std::vector<double>* per_client = nullptr) {
  double sum = 0.0;
  std::size_t counted = 0;
  for (const auto& client : world.clients) {
    const double acc = protocol::evaluate_client(world.server, client,
                                                 world.dataset, world.pc);
    if (per_client) per_client->push_back(acc);
    if (!std::isnan(acc)) {
      sum += acc;
      ++counted;
    }
  }
  return counted == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : sum / static_cast<double>(counted);
}

}  // namespace

RunOutputs run_experiment(const RunConfig& cfg, const std::string& out_dir,
                          bool dump_masks) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  if (dump_masks) fs::create_directories(fs::path(out_dir) / "masks");

  World world = build_world(cfg);

  const fs::path csv_path = fs::path(out_dir) / "metrics.csv";
  std::ofstream csv(csv_path);
  if (!csv) fail(ErrorCode::kIo, "cannot write " + csv_path.string());
  csv << "round,client_id,split_depth,participated,train_loss,test_accuracy,"
         "up_model_bytes,up_indicator_bytes,up_smashed_bytes,"
         "down_model_bytes,down_grad_bytes\n";

  const double initial_accuracy = mean_accuracy(world);

  protocol::TrafficRecord totals;
  json eval_history = json::array();
  json theta_hashes = json::array();
  json layer_history = json::array();
  double last_round_loss = std::numeric_limits<double>::quiet_NaN();

  for (std::size_t r = 1; r <= cfg.rounds; ++r) {
    const protocol::RoundLog log =
        protocol::run_round(world.server, world.clients, world.dataset,
                            world.pc);
    const bool eval_round =
        (cfg.eval_interval > 0 && r % cfg.eval_interval == 0) ||
        r == cfg.rounds;

    std::vector<double> accuracies(world.clients.size(),
                                   std::numeric_limits<double>::quiet_NaN());
    if (eval_round) {
      for (std::size_t i = 0; i < world.clients.size(); ++i)
        accuracies[i] = protocol::evaluate_client(
            world.server, world.clients[i], world.dataset, world.pc);
    }

    std::set<protocol::ClientId> participated(log.participants.begin(),
                                              log.participants.end());
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (const auto& rec : log.records) {
      totals.up_model += rec.traffic.up_model;
      totals.up_indicator += rec.traffic.up_indicator;
      totals.up_smashed += rec.traffic.up_smashed;
      totals.down_model += rec.traffic.down_model;
      totals.down_grad += rec.traffic.down_grad;
      if (!std::isnan(rec.train_loss)) {
        loss_sum += rec.train_loss;
        ++loss_count;
      }
      csv << r << ',' << rec.id << ','
          << world.clients[rec.id].split_depth << ",1,"
          << (std::isnan(rec.train_loss) ? std::string()
                                         : fmt_double(rec.train_loss))
          << ','
          << (std::isnan(accuracies[rec.id]) ? std::string()
                                             : fmt_double(accuracies[rec.id]))
          << ',' << rec.traffic.up_model << ',' << rec.traffic.up_indicator
          << ',' << rec.traffic.up_smashed << ',' << rec.traffic.down_model
          << ',' << rec.traffic.down_grad << '\n';

      if (dump_masks && !rec.uplink_mask.layers.empty()) {
        mask::Shapes shapes;
        for (const auto& layer_bits : rec.uplink_mask.layers) {
          const auto& w =
              world.server.model.layers[shapes.size()];
          (void)layer_bits;
          shapes.push_back({w.rows, w.cols});
        }
        const auto bytes = wire::pack_mask(rec.uplink_mask, shapes);
        const fs::path mask_path =
            fs::path(out_dir) / "masks" /
            ("round" + std::to_string(r) + "_client" + std::to_string(rec.id) +
             ".mask");
        std::ofstream mf(mask_path, std::ios::binary);
        mf.write(reinterpret_cast<const char*>(bytes.data()),
                 static_cast<std::streamsize>(bytes.size()));
      }
    }
    if (loss_count > 0)
      last_round_loss = loss_sum / static_cast<double>(loss_count);

    if (eval_round) {
      double acc_sum = 0.0;
      std::size_t acc_count = 0;
      for (std::size_t i = 0; i < world.clients.size(); ++i) {
        if (!std::isnan(accuracies[i])) {
          acc_sum += accuracies[i];
          ++acc_count;
        }
        if (participated.count(i)) continue;
        csv << r << ',' << i << ',' << world.clients[i].split_depth << ",0,,"
            << (std::isnan(accuracies[i]) ? std::string()
                                          : fmt_double(accuracies[i]))
            << ",0,0,0,0,0\n";
      }
      eval_history.push_back(
          {{"round", r},
           {"mean_accuracy",
            acc_count ? acc_sum / static_cast<double>(acc_count) : 0.0}});
    }
    theta_hashes.push_back(hex64(protocol::theta_hash(log.theta_after)));
    layer_history.push_back(log.layer_participant_counts);
  }
  csv.close();

  std::vector<double> per_client;
  const double final_accuracy = mean_accuracy(world, &per_client);

  json summary;
  summary["schema_version"] = 1;
  summary["config"] = config_to_json(cfg);
  summary["rounds_completed"] = cfg.rounds;
  summary["initial_accuracy_mean"] = initial_accuracy;
  summary["final_accuracy_mean"] = final_accuracy;
  summary["per_client_final_accuracy"] = per_client;
  summary["eval_history"] = eval_history;
  summary["train_loss_last_round_mean"] =
      std::isnan(last_round_loss) ? json(nullptr) : json(last_round_loss);
  summary["totals"] = {{"up_model_bytes", totals.up_model},
                       {"up_indicator_bytes", totals.up_indicator},
                       {"up_smashed_bytes", totals.up_smashed},
                       {"down_model_bytes", totals.down_model},
                       {"down_grad_bytes", totals.down_grad},
                       {"uplink_bytes", totals.uplink()},
                       {"downlink_bytes", totals.downlink()}};
  summary["theta_hash_per_round"] = theta_hashes;
  summary["final_theta_hash"] =
      hex64(protocol::theta_hash(world.server.theta));
  summary["layer_participant_history"] = layer_history;
  summary["server_update_policy"] = "per-client-batch-ascending-id";

  const fs::path summary_path = fs::path(out_dir) / "summary.json";
  std::ofstream sj(summary_path);
  if (!sj) fail(ErrorCode::kIo, "cannot write " + summary_path.string());
  const std::string summary_text = summary.dump(2);
  sj << summary_text << '\n';

  RunOutputs out;
  out.metrics_csv_path = csv_path.string();
  out.summary_json_path = summary_path.string();
  out.summary_json = summary_text;
  return out;
}

AttackOutputs run_attack_eval(const RunConfig& cfg,
                              const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const AttackSpec& spec = cfg.attack;
  if (spec.victim_dims.size() < 2)
    fail(ErrorCode::kInvalidConfig, "attack: victim_dims needs >= 2 entries");
  if (!spec.input_shape.empty()) {
    std::size_t prod = 1;
    for (std::size_t v : spec.input_shape) prod *= v;
    if (prod != spec.victim_dims.front())
      fail(ErrorCode::kInvalidConfig,
           "attack: input_shape does not match the victim input width");
  }

  const std::uint64_t victim_seed =
      spec.victim_seed != 0 ? spec.victim_seed
                            : Rng::derive(cfg.seed, Rng::tag("victim")).next_u64();
  net::DenseStack victim =
      protocol::build_mlp(spec.victim_dims, victim_seed, /*trainable=*/false);
  if (spec.linear)
    for (auto& flag : victim.relu_after) flag = 0;
  const mask::Shapes shapes = mask::shapes_of(victim);
  const mask::ProbMask theta = mask::ProbMask::constant(shapes, spec.theta);
  const std::size_t dim = victim.input_width();

  const fs::path csv_path = fs::path(out_dir) / "attack_trials.csv";
  std::ofstream csv(csv_path);
  if (!csv) fail(ErrorCode::kIo, "cannot write " + csv_path.string());
  csv << "arm,trial,error,objective,iterations,converged";
  const bool want_psnr = !spec.input_shape.empty();
  if (want_psnr) csv << ",psnr";
  csv << '\n';

  json arms_summary;
  for (std::size_t arm_idx = 0; arm_idx < spec.arms.size(); ++arm_idx) {
    const std::string& arm = spec.arms[arm_idx];
    std::vector<double> errors, psnrs;
    for (std::size_t trial = 0; trial < spec.trials; ++trial) {
      Rng rng = Rng::derive(cfg.seed, Rng::tag("attack"), arm_idx, trial);
      std::vector<double> x(dim);
      for (double& v : x) v = rng.normal();

      attack::VictimView view;
      view.stack = &victim;
      attack::MaskKnowledge knowledge = attack::MaskKnowledge::kNone;
      std::vector<double> observed;
      mask::BinaryMask sampled;
      if (arm == "pm-sfl") {
        sampled = mask::sample_mask(theta, rng);
        observed = mask::masked_forward(victim, sampled, x).values;
        knowledge = attack::mask_knowledge_from_name(spec.knowledge);
        view.exact_mask = &sampled;
        view.theta = &theta;
      } else if (arm == "splitfed") {
        observed = net::stack_forward(victim, x);
      } else if (arm == "splitfed-dp") {
        observed = net::stack_forward(victim, x);
        const double sensitivity = privacy::forward_sensitivity(
            victim, cfg.privacy.input_linf_bound);
        const double eps =
            cfg.privacy.epsilon > 0.0 ? cfg.privacy.epsilon : 0.1;
        for (double& v : observed) v += rng.laplace(sensitivity / eps);
      } else {
        fail(ErrorCode::kInvalidConfig, "attack: unknown arm " + arm);
      }

      const attack::AttackReport report = attack::dlg_attack(
          observed, view, knowledge, spec.budget, spec.step, rng, x);
      errors.push_back(report.error);
      csv << arm << ',' << trial << ',' << fmt_double(report.error) << ','
          << fmt_double(report.objective) << ',' << report.iterations_used
          << ',' << (report.converged ? 1 : 0);
      if (want_psnr) {
        double peak = 0.0;
        for (double v : x) peak = std::max(peak, std::abs(v));
        const double rmse =
            report.error / std::sqrt(static_cast<double>(dim));
        const double psnr = rmse > 0.0
                                ? 20.0 * std::log10(peak / rmse)
                                : std::numeric_limits<double>::infinity();
        psnrs.push_back(psnr);
        csv << ',' << fmt_double(psnr);
      }
      csv << '\n';
    }
    std::vector<double> sorted = errors;
    std::sort(sorted.begin(), sorted.end());
    double mean = 0.0;
    for (double e : errors) mean += e;
    mean /= static_cast<double>(std::max<std::size_t>(1, errors.size()));
    const double median =
        sorted.empty()
            ? 0.0
            : (sorted.size() % 2 ? sorted[sorted.size() / 2]
                                 : 0.5 * (sorted[sorted.size() / 2 - 1] +
                                          sorted[sorted.size() / 2]));
    json arm_json = {{"trials", errors.size()},
                     {"mean_error", mean},
                     {"median_error", median}};
    if (want_psnr && !psnrs.empty()) {
      double psum = 0.0;
      std::size_t pcount = 0;
      for (double p : psnrs)
        if (std::isfinite(p)) {
          psum += p;
          ++pcount;
        }
      if (pcount > 0)
        arm_json["mean_psnr"] = psum / static_cast<double>(pcount);
    }
    arms_summary[arm] = arm_json;
  }
  csv.close();

  json summary;
  summary["schema_version"] = 1;
  summary["config"] = config_to_json(cfg);
  summary["arms"] = arms_summary;
  const fs::path summary_path = fs::path(out_dir) / "attack_summary.json";
  std::ofstream sj(summary_path);
  if (!sj) fail(ErrorCode::kIo, "cannot write " + summary_path.string());
  const std::string summary_text = summary.dump(2);
  sj << summary_text << '\n';

  AttackOutputs out;
  out.trials_csv_path = csv_path.string();
  out.summary_json_path = summary_path.string();
  out.summary_json = summary_text;
  return out;
}

std::string partition_preview(const RunConfig& cfg) {
  const data::Dataset dataset = data::synthetic_dataset(cfg.dataset);
  Rng rng = Rng::derive(cfg.seed, Rng::tag("partition"));
  std::vector<std::vector<std::size_t>> parts;
  if (cfg.partition.type == PartitionType::kDirichlet)
    parts = data::dirichlet_partition(dataset.labels, cfg.clients,
                                      cfg.partition.alpha, rng);
  else
    parts = data::personalized_partition(dataset.labels, cfg.clients,
                                         cfg.partition.classes_per_client,
                                         rng);
  json j;
  j["clients"] = cfg.clients;
  j["samples"] = dataset.size();
  j["classes"] = dataset.classes;
  j["partition"] = cfg.partition.type == PartitionType::kDirichlet
                       ? "dirichlet"
                       : "personalized";
  json per_client = json::array();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    std::vector<std::size_t> hist(dataset.classes, 0);
    for (std::size_t idx : parts[i]) ++hist[dataset.labels[idx]];
    per_client.push_back({{"client", i},
                          {"count", parts[i].size()},
                          {"class_histogram", hist}});
  }
  j["per_client"] = per_client;
  return j.dump(2);
}

}  // namespace pmsfl::harness
