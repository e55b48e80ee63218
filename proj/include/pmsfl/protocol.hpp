#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pmsfl/compensation.hpp"
#include "pmsfl/data.hpp"
#include "pmsfl/mask.hpp"
#include "pmsfl/net.hpp"
#include "pmsfl/personalization.hpp"
#include "pmsfl/privacy.hpp"
#include "pmsfl/rng.hpp"

namespace pmsfl::protocol {

using ClientId = compensation::ClientId;

enum class TrainingMode { kMasks, kWeights };
enum class UplinkFormat { kBinaryMask, kFloatMask, kWeights };
enum class TopMode { kWeights, kMasks };
enum class OptimizerKind { kSgd, kAdam };
enum class EvalMaskMode { kMap, kSample };

struct ProtocolConfig {
  TrainingMode training = TrainingMode::kMasks;
  UplinkFormat uplink = UplinkFormat::kBinaryMask;
  TopMode top_mode = TopMode::kWeights;
  bool personalization = false;
  bool compensation = false;
  OptimizerKind optimizer = OptimizerKind::kSgd;
  EvalMaskMode eval_mask = EvalMaskMode::kMap;
  double lr = 1e-3;
  std::size_t batch_size = 32;
  std::size_t local_epochs = 5;
  std::size_t participants_per_round = 1;
  std::size_t total_rounds = 1;
  double warmup_fraction = 0.1;
  double ratio_cap = 0.5;
  // Broadcast probabilities are clamped into [clamp, 1-clamp] before the
  // logistic inverse so aggregated bits at exactly 0 or 1 stay trainable.
  double theta_clamp = 0.01;
  privacy::PrivacySpec privacy;
  std::uint64_t master_seed = 0;
};

// Per-layer Adam moments; layers step independently so tied layers shared
// across split variants keep consistent counts.
struct AdamBuf {
  std::vector<std::vector<double>> m, v;
  std::vector<std::uint64_t> t;

  void ensure(std::size_t layers);
  void reset();
};

struct ClientState {
  ClientId id = 0;
  std::size_t split_depth = 1;
  // Mask training: locally retained probabilities and the personalization
  // indicator (both over the client's bottom layers).
  mask::ProbMask theta_local;
  personalization::PersonalizationIndicator indicator;
  // Weight training baseline: the client's own trainable bottom copy.
  net::DenseStack bottom_weights;
  std::vector<std::size_t> train_idx, test_idx;
};

struct ServerState {
  net::DenseStack model;  // all layers; frozen under mask training
  mask::ProbMask theta;   // global probabilities, all layers (mask modes)
  // Server-side score training of top layers (mask top-mode), re-derived
  // from the broadcast each round.
  mask::ScoreMask srv_scores;
  std::vector<std::uint8_t> srv_layer_active;
  AdamBuf srv_adam;
  AdamBuf top_adam;  // persistent optimizer state for weight-trained tops
  std::uint64_t round = 0;
};

struct SmashedBatch {
  std::vector<net::Activation> activations;
  std::vector<std::size_t> labels;
  ClientId client_id = 0;
};

struct TrafficRecord {
  std::uint64_t up_model = 0;      // mask / theta / weight payload + header
  std::uint64_t up_indicator = 0;  // personalization indicator bits
  std::uint64_t up_smashed = 0;    // activations + labels
  std::uint64_t down_model = 0;    // broadcast model or probabilities
  std::uint64_t down_grad = 0;     // returned smashed-data gradients

  std::uint64_t uplink() const { return up_model + up_indicator + up_smashed; }
  std::uint64_t downlink() const { return down_model + down_grad; }
};

struct ClientRoundRecord {
  ClientId id = 0;
  double train_loss = 0.0;
  TrafficRecord traffic;
  mask::BinaryMask uplink_mask;  // empty unless a binary mask was sent
};

struct RoundLog {
  std::uint64_t round = 0;
  std::vector<ClientId> participants;
  std::vector<ClientRoundRecord> records;
  mask::ProbMask theta_after;
  std::vector<std::size_t> layer_participant_counts;  // |K^l_t| per layer
  compensation::ServerMaskTrace server_trace;
};

struct Batch {
  std::vector<const std::vector<double>*> features;
  std::vector<std::size_t> labels;

  std::size_t size() const { return labels.size(); }
};

// Working state for one client-round: the bottom stack view plus whatever
// the selected training mode mutates locally.
struct ClientRoundContext {
  ClientId id = 0;
  net::DenseStack bottom;
  mask::ScoreMask scores;   // mask training
  AdamBuf score_adam;
  AdamBuf weight_adam;      // weight training
  double forward_noise_scale = 0.0;  // laplace-forward, 0 = off
  double update_noise_sigma = 0.0;   // gaussian-update
  TrafficRecord traffic;
  double loss_sum = 0.0;
  std::size_t loss_batches = 0;
};

struct LocalIterationResult {
  double mean_loss = 0.0;
  mask::BinaryMask sampled_mask;
  SmashedBatch smashed;
  std::vector<std::vector<double>> returned_grads;
};

// Uniform sample of K distinct client ids out of N, ascending.
std::vector<ClientId> sample_participants(std::size_t n, std::size_t k,
                                          Rng& rng);

// theta = (1/K) sum of sampled bits.
mask::ProbMask aggregate_binary_masks(
    const std::vector<const mask::BinaryMask*>& masks);

// Kaiming-initialized MLP with ReLU after every layer but the last.
net::DenseStack build_mlp(const std::vector<std::size_t>& dims,
                          std::uint64_t seed, bool trainable);

// frozen_depth: leading layers kept frozen under mask training (the
// mask-gated prefix). Layers beyond it are weight-trainable, which is only
// coherent when every client splits at frozen_depth or deeper; with mixed
// depths and a mask-trained top, pass the full layer count.
ServerState init_server(const net::DenseStack& model, TrainingMode training,
                        std::size_t frozen_depth);

// The client's view of global state at the start of a round: bottom stack
// plus (mask modes) scores from the broadcast merged with personalized
// probabilities.
ClientRoundContext make_round_context(const ServerState& server,
                                      const ClientState& client,
                                      const ProtocolConfig& cfg);

// Steps 2.1-2.3 for one mini-batch: sample a mask, smash, let the server
// update its side and return gradients, apply the local update.
LocalIterationResult client_local_iteration(ClientRoundContext& ctx,
                                            ServerState& server,
                                            const Batch& batch,
                                            const ProtocolConfig& cfg,
                                            Rng& rng_client, Rng& rng_server,
                                            Rng& rng_privacy);

// One full communication round over the given dataset-backed clients.
RoundLog run_round(ServerState& server, std::vector<ClientState>& clients,
                   const data::Dataset& dataset, const ProtocolConfig& cfg);

// Weight-training SplitFed round (bottom SGD + FedAvg aggregation); the
// comparison baseline. Equivalent to run_round with weight training.
RoundLog splitfed_weight_baseline(ServerState& server,
                                  std::vector<ClientState>& clients,
                                  const data::Dataset& dataset,
                                  const ProtocolConfig& cfg);

// Fraction of the client's local test split classified correctly by the
// full (bottom + top) model under the configured evaluation mask rule.
double evaluate_client(const ServerState& server, const ClientState& client,
                       const data::Dataset& dataset, const ProtocolConfig& cfg);

std::size_t warmup_rounds(const ProtocolConfig& cfg);
std::size_t growth_increment(const ProtocolConfig& cfg, std::size_t d);

// FNV-1a over the raw bytes of every theta layer, for bit-identity checks.
std::uint64_t theta_hash(const mask::ProbMask& theta);

}  // namespace pmsfl::protocol
