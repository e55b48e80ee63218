#include "pmsfl/protocol.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>

#include "pmsfl/error.hpp"
#include "pmsfl/wire.hpp"

namespace pmsfl::protocol {

namespace {

net::DenseStack slice_stack(const net::DenseStack& model, std::size_t from,
                            std::size_t to) {
  net::DenseStack out;
  for (std::size_t li = from; li < to; ++li) {
    out.layers.push_back(model.layers[li]);
    out.relu_after.push_back(model.relu_after[li]);
  }
  return out;
}

mask::ProbMask slice_theta(const mask::ProbMask& theta, std::size_t from,
                           std::size_t to) {
  mask::ProbMask out;
  for (std::size_t li = from; li < to; ++li)
    out.layers.push_back(theta.layers[li]);
  return out;
}

void clamp_probs(mask::ProbMask& theta, double clamp) {
  const double lo = clamp;
  const double hi = 1.0 - clamp;
  for (auto& layer : theta.layers)
    for (double& v : layer) v = std::min(hi, std::max(lo, v));
}

// Broadcast probabilities overridden by the locally retained ones at
// personalized coordinates.
mask::ProbMask merge_theta(const mask::ProbMask& broadcast,
                           const mask::ProbMask& local,
                           const personalization::PersonalizationIndicator& ind) {
  mask::ProbMask out = broadcast;
  for (std::size_t li = 0; li < out.layers.size(); ++li)
    for (std::size_t k = 0; k < out.layers[li].size(); ++k)
      if (ind.layers[li][k]) out.layers[li][k] = local.layers[li][k];
  return out;
}

void sgd_weights(net::WeightMatrix& w, const std::vector<double>& grad,
                 double lr, double inv_batch) {
  if (w.frozen)
    fail(ErrorCode::kInternal, "attempted update of frozen weights");
  for (std::size_t k = 0; k < w.values.size(); ++k)
    w.values[k] -= lr * inv_batch * grad[k];
}

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void adam_vector(AdamBuf& buf, std::size_t layer, std::vector<double>& params,
                 const std::vector<double>& grad, double lr,
                 double inv_batch) {
  auto& m = buf.m[layer];
  auto& v = buf.v[layer];
  if (m.size() != params.size()) m.assign(params.size(), 0.0);
  if (v.size() != params.size()) v.assign(params.size(), 0.0);
  const double t = static_cast<double>(++buf.t[layer]);
  const double bc1 = 1.0 - std::pow(kAdamBeta1, t);
  const double bc2 = 1.0 - std::pow(kAdamBeta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = grad[k] * inv_batch;
    m[k] = kAdamBeta1 * m[k] + (1.0 - kAdamBeta1) * g;
    v[k] = kAdamBeta2 * v[k] + (1.0 - kAdamBeta2) * g * g;
    params[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + kAdamEps);
  }
}

std::vector<double> flatten(const std::vector<std::vector<double>>& layers) {
  std::vector<double> flat;
  for (const auto& l : layers) flat.insert(flat.end(), l.begin(), l.end());
  return flat;
}

void add_unflattened(std::vector<std::vector<double>>& acc,
                     const std::vector<double>& flat) {
  std::size_t pos = 0;
  for (auto& l : acc) {
    for (double& v : l) v += flat[pos++];
  }
}

std::vector<std::vector<double>> zeros_like(
    const std::vector<std::vector<double>>& ref) {
  std::vector<std::vector<double>> out;
  out.reserve(ref.size());
  for (const auto& l : ref) out.emplace_back(l.size(), 0.0);
  return out;
}

struct ServerStepResult {
  double loss_sum = 0.0;
  std::vector<std::vector<double>> input_grads;  // dL/dq per sample
};

// Step 2.2: the server consumes one client's smashed mini-batch, updates
// its own side (weights or scores) and produces the per-sample gradients
// that travel back. Gradients are taken at the pre-update parameters.
ServerStepResult server_step(ServerState& server, std::size_t depth,
                             const SmashedBatch& batch,
                             const ProtocolConfig& cfg, Rng& rng_server) {
  const std::size_t total_layers = server.model.depth();
  const std::size_t n = batch.labels.size();
  ServerStepResult result;
  result.input_grads.reserve(n);

  if (depth > total_layers)
    fail(ErrorCode::kProtocol, "server_step: split depth exceeds model");
  const std::size_t width = total_layers == depth
                                ? server.model.output_width()
                                : server.model.layers[depth].cols;
  for (const auto& act : batch.activations)
    if (act.values.size() != width)
      fail(ErrorCode::kProtocol,
           "server_step: smashed width does not match the top model");

  if (depth == total_layers) {
    // Degenerate split: the smashed data already holds the logits.
    for (std::size_t i = 0; i < n; ++i) {
      net::LossValue loss =
          net::cross_entropy(batch.activations[i].values, batch.labels[i]);
      result.loss_sum += loss.value;
      result.input_grads.push_back(std::move(loss.grad_wrt_logits));
    }
    return result;
  }

  net::DenseStack top = slice_stack(server.model, depth, total_layers);
  const double inv_batch = 1.0 / static_cast<double>(n);

  if (cfg.top_mode == TopMode::kWeights) {
    std::vector<std::vector<double>> acc;
    for (std::size_t i = 0; i < n; ++i) {
      net::StackCache cache;
      const std::vector<double> logits =
          net::stack_forward(top, batch.activations[i].values, &cache);
      net::LossValue loss = net::cross_entropy(logits, batch.labels[i]);
      result.loss_sum += loss.value;
      net::StackGrads grads =
          net::stack_backward(top, cache, loss.grad_wrt_logits);
      if (acc.empty())
        acc = std::move(grads.weight_grads);
      else
        for (std::size_t li = 0; li < acc.size(); ++li)
          for (std::size_t k = 0; k < acc[li].size(); ++k)
            acc[li][k] += grads.weight_grads[li][k];
      result.input_grads.push_back(std::move(grads.input_grad));
    }
    for (std::size_t li = 0; li < top.layers.size(); ++li) {
      net::WeightMatrix& w = server.model.layers[depth + li];
      if (cfg.optimizer == OptimizerKind::kAdam) {
        if (w.frozen)
          fail(ErrorCode::kInternal, "attempted update of frozen weights");
        server.top_adam.ensure(total_layers);
        adam_vector(server.top_adam, depth + li, w.values, acc[li], cfg.lr,
                    inv_batch);
      } else {
        sgd_weights(w, acc[li], cfg.lr, inv_batch);
      }
    }
    return result;
  }

  // Mask-trained top model: sample one mask per batch and run the same
  // straight-through machinery on the server-held scores.
  mask::ScoreMask top_scores;
  for (std::size_t li = depth; li < total_layers; ++li) {
    if (!server.srv_layer_active[li])
      fail(ErrorCode::kProtocol, "server_step: inactive server layer");
    top_scores.layers.push_back(server.srv_scores.layers[li]);
  }
  const mask::ProbMask top_theta = mask::probs_from_scores(top_scores);
  const mask::BinaryMask top_mask = mask::sample_mask(top_theta, rng_server);

  std::vector<std::vector<double>> acc;
  for (std::size_t i = 0; i < n; ++i) {
    mask::ForwardCache cache;
    net::Activation logits =
        mask::masked_forward(top, top_mask, batch.activations[i].values, &cache);
    net::LossValue loss = net::cross_entropy(logits.values, batch.labels[i]);
    result.loss_sum += loss.value;
    mask::SteGrads grads =
        mask::ste_backward(cache, top, top_scores, loss.grad_wrt_logits);
    if (acc.empty())
      acc = std::move(grads.score_grads);
    else
      for (std::size_t li = 0; li < acc.size(); ++li)
        for (std::size_t k = 0; k < acc[li].size(); ++k)
          acc[li][k] += grads.score_grads[li][k];
    result.input_grads.push_back(std::move(grads.input_grad));
  }
  for (std::size_t li = 0; li < top.layers.size(); ++li) {
    auto& s = server.srv_scores.layers[depth + li];
    if (cfg.optimizer == OptimizerKind::kAdam) {
      server.srv_adam.ensure(total_layers);
      adam_vector(server.srv_adam, depth + li, s, acc[li], cfg.lr, inv_batch);
    } else {
      for (std::size_t k = 0; k < s.size(); ++k)
        s[k] -= cfg.lr * inv_batch * acc[li][k];
    }
  }
  return result;
}

std::uint64_t fnv1a_bytes(const void* data, std::size_t len,
                          std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

void AdamBuf::ensure(std::size_t layers) {
  if (m.size() < layers) {
    m.resize(layers);
    v.resize(layers);
    t.resize(layers, 0);
  }
}

void AdamBuf::reset() {
  m.clear();
  v.clear();
  t.clear();
}

std::vector<ClientId> sample_participants(std::size_t n, std::size_t k,
                                          Rng& rng) {
  if (k < 1 || k > n)
    fail(ErrorCode::kInvalidConfig,
         "sample_participants: K must satisfy 1 <= K <= N");
  std::vector<ClientId> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

mask::ProbMask aggregate_binary_masks(
    const std::vector<const mask::BinaryMask*>& masks) {
  if (masks.empty())
    fail(ErrorCode::kInvalidConfig, "aggregate_binary_masks: empty list");
  const std::size_t layer_count = masks.front()->layers.size();
  mask::ProbMask theta;
  theta.layers.resize(layer_count);
  const double inv_k = 1.0 / static_cast<double>(masks.size());
  for (std::size_t li = 0; li < layer_count; ++li) {
    const std::size_t n = masks.front()->layers[li].size();
    theta.layers[li].assign(n, 0.0);
    for (const auto* m : masks) {
      if (m->layers.size() != layer_count || m->layers[li].size() != n)
        fail(ErrorCode::kInvalidShape, "aggregate_binary_masks: shape drift");
      for (std::size_t kk = 0; kk < n; ++kk)
        theta.layers[li][kk] += m->layers[li][kk];
    }
    for (double& v : theta.layers[li]) v *= inv_k;
  }
  return theta;
}

net::DenseStack build_mlp(const std::vector<std::size_t>& dims,
                          std::uint64_t seed, bool trainable) {
  if (dims.size() < 2)
    fail(ErrorCode::kInvalidConfig, "build_mlp: need at least two dims");
  net::DenseStack stack;
  for (std::size_t li = 0; li + 1 < dims.size(); ++li) {
    Rng rng = Rng::derive(seed, Rng::tag("init"), li);
    net::WeightMatrix w = net::kaiming_init(dims[li + 1], dims[li], rng);
    w.frozen = !trainable;
    stack.layers.push_back(std::move(w));
    stack.relu_after.push_back(li + 2 < dims.size() ? 1 : 0);
  }
  return stack;
}

ServerState init_server(const net::DenseStack& model, TrainingMode training,
                        std::size_t frozen_depth) {
  ServerState server;
  server.model = model;
  for (std::size_t li = 0; li < server.model.layers.size(); ++li)
    server.model.layers[li].frozen =
        training == TrainingMode::kMasks && li < frozen_depth;
  if (training == TrainingMode::kMasks) {
    server.theta =
        mask::ProbMask::constant(mask::shapes_of(server.model), 0.5);
  }
  server.srv_layer_active.assign(server.model.depth(), 0);
  return server;
}

ClientRoundContext make_round_context(const ServerState& server,
                                      const ClientState& client,
                                      const ProtocolConfig& cfg) {
  if (client.split_depth < 1 || client.split_depth > server.model.depth())
    fail(ErrorCode::kInvalidConfig, "split depth out of range");
  ClientRoundContext ctx;
  ctx.id = client.id;
  ctx.bottom = slice_stack(server.model, 0, client.split_depth);
  if (cfg.training == TrainingMode::kMasks) {
    mask::ProbMask broadcast = slice_theta(server.theta, 0, client.split_depth);
    mask::ProbMask merged =
        merge_theta(broadcast, client.theta_local, client.indicator);
    clamp_probs(merged, cfg.theta_clamp);
    ctx.scores = mask::scores_from_probs(merged);
  } else {
    for (auto& w : ctx.bottom.layers) w.frozen = false;
  }
  if (cfg.privacy.mechanism == privacy::Mechanism::kLaplaceForward) {
    const double sensitivity =
        privacy::forward_sensitivity(ctx.bottom, cfg.privacy.input_linf_bound);
    ctx.forward_noise_scale = sensitivity / cfg.privacy.epsilon;
  }
  return ctx;
}

LocalIterationResult client_local_iteration(ClientRoundContext& ctx,
                                            ServerState& server,
                                            const Batch& batch,
                                            const ProtocolConfig& cfg,
                                            Rng& rng_client, Rng& rng_server,
                                            Rng& rng_privacy) {
  if (batch.size() == 0)
    fail(ErrorCode::kInvalidConfig, "client_local_iteration: empty batch");
  const std::size_t n = batch.size();
  const std::size_t depth = ctx.bottom.depth();
  const std::size_t out_width = ctx.bottom.output_width();

  LocalIterationResult result;
  result.smashed.client_id = ctx.id;
  result.smashed.labels = batch.labels;

  const bool mask_training = cfg.training == TrainingMode::kMasks;
  std::vector<mask::ForwardCache> mcaches;
  std::vector<net::StackCache> wcaches;

  if (mask_training) {
    const mask::ProbMask theta_cur = mask::probs_from_scores(ctx.scores);
    result.sampled_mask = mask::sample_mask(theta_cur, rng_client);
    mcaches.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      net::Activation act = mask::masked_forward(
          ctx.bottom, result.sampled_mask, *batch.features[i], &mcaches[i]);
      result.smashed.activations.push_back(std::move(act));
    }
  } else {
    wcaches.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      net::Activation act;
      act.layer_index = depth;
      act.values = net::stack_forward(ctx.bottom, *batch.features[i],
                                      &wcaches[i]);
      result.smashed.activations.push_back(std::move(act));
    }
  }

  if (ctx.forward_noise_scale > 0.0) {
    for (auto& act : result.smashed.activations)
      for (double& v : act.values)
        v += rng_privacy.laplace(ctx.forward_noise_scale);
  }

  ctx.traffic.up_smashed += wire::smashed_wire_bytes(n, out_width);

  ServerStepResult srv = server_step(server, depth, result.smashed, cfg,
                                     rng_server);
  ctx.traffic.down_grad += wire::grad_wire_bytes(n, out_width);
  result.returned_grads = srv.input_grads;

  const double mean_loss = srv.loss_sum / static_cast<double>(n);
  ctx.loss_sum += mean_loss;
  ctx.loss_batches += 1;
  result.mean_loss = mean_loss;

  if (mask_training) {
    const bool dp_update =
        cfg.privacy.mechanism == privacy::Mechanism::kGaussianUpdate;
    std::vector<std::vector<double>> acc = zeros_like(ctx.scores.layers);
    for (std::size_t i = 0; i < n; ++i) {
      mask::SteGrads grads = mask::ste_backward(mcaches[i], ctx.bottom,
                                                ctx.scores,
                                                srv.input_grads[i]);
      if (dp_update) {
        // The lr-scaled per-sample update is what gets clipped, so each
        // sample's contribution to the mean stays bounded by Gamma.
        std::vector<double> flat = flatten(grads.score_grads);
        for (double& v : flat) v *= cfg.lr;
        add_unflattened(acc,
                        privacy::clip_update(flat, cfg.privacy.clip_bound));
      } else {
        for (std::size_t li = 0; li < acc.size(); ++li)
          for (std::size_t k = 0; k < acc[li].size(); ++k)
            acc[li][k] += grads.score_grads[li][k];
      }
    }
    if (dp_update) {
      if (cfg.optimizer != OptimizerKind::kSgd)
        fail(ErrorCode::kInvalidConfig,
             "gaussian-update mechanism requires the sgd optimizer");
      ctx.scores = privacy::noisy_score_update(ctx.scores, acc, n,
                                               ctx.update_noise_sigma,
                                               rng_privacy);
    } else if (cfg.optimizer == OptimizerKind::kAdam) {
      ctx.score_adam.ensure(ctx.scores.layers.size());
      for (std::size_t li = 0; li < ctx.scores.layers.size(); ++li)
        adam_vector(ctx.score_adam, li, ctx.scores.layers[li], acc[li], cfg.lr,
                    1.0 / static_cast<double>(n));
    } else {
      ctx.scores = mask::apply_score_update(ctx.scores, acc, n, cfg.lr);
    }
  } else {
    std::vector<std::vector<double>> acc;
    for (std::size_t i = 0; i < n; ++i) {
      net::StackGrads grads =
          net::stack_backward(ctx.bottom, wcaches[i], srv.input_grads[i]);
      if (acc.empty())
        acc = std::move(grads.weight_grads);
      else
        for (std::size_t li = 0; li < acc.size(); ++li)
          for (std::size_t k = 0; k < acc[li].size(); ++k)
            acc[li][k] += grads.weight_grads[li][k];
    }
    for (std::size_t li = 0; li < ctx.bottom.layers.size(); ++li) {
      if (cfg.optimizer == OptimizerKind::kAdam) {
        ctx.weight_adam.ensure(ctx.bottom.layers.size());
        adam_vector(ctx.weight_adam, li, ctx.bottom.layers[li].values, acc[li],
                    cfg.lr, 1.0 / static_cast<double>(n));
      } else {
        sgd_weights(ctx.bottom.layers[li], acc[li], cfg.lr,
                    1.0 / static_cast<double>(n));
      }
    }
  }
  return result;
}

std::size_t warmup_rounds(const ProtocolConfig& cfg) {
  return static_cast<std::size_t>(std::floor(
      cfg.warmup_fraction * static_cast<double>(cfg.total_rounds)));
}

std::size_t growth_increment(const ProtocolConfig& cfg, std::size_t d) {
  const std::size_t warm = warmup_rounds(cfg);
  const std::size_t remaining =
      cfg.total_rounds > warm ? cfg.total_rounds - warm : 1;
  const double cap = cfg.ratio_cap * static_cast<double>(d);
  return static_cast<std::size_t>(
      std::ceil(cap / static_cast<double>(remaining)));
}

RoundLog run_round(ServerState& server, std::vector<ClientState>& clients,
                   const data::Dataset& dataset, const ProtocolConfig& cfg) {
  const std::size_t n_clients = clients.size();
  const std::size_t total_layers = server.model.depth();
  const std::uint64_t round = server.round;
  const bool mask_training = cfg.training == TrainingMode::kMasks;

  Rng rng_part =
      Rng::derive(cfg.master_seed, Rng::tag("participants"), round);
  RoundLog log;
  log.round = round;
  log.participants =
      sample_participants(n_clients, cfg.participants_per_round, rng_part);

  std::size_t min_depth = total_layers;
  for (ClientId id : log.participants)
    min_depth = std::min(min_depth, clients[id].split_depth);

  // Re-derive server-side scores for the layers that will be
  // server-resident this round (mask top-mode only).
  server.srv_layer_active.assign(total_layers, 0);
  if (mask_training && cfg.top_mode == TopMode::kMasks) {
    server.srv_scores.layers.assign(total_layers, {});
    server.srv_adam.reset();
    for (std::size_t li = min_depth; li < total_layers; ++li) {
      std::vector<double> probs = server.theta.layers[li];
      for (double& v : probs)
        v = std::min(1.0 - cfg.theta_clamp, std::max(cfg.theta_clamp, v));
      server.srv_scores.layers[li] = net::logistic_inverse(probs);
      server.srv_layer_active[li] = 1;
    }
  }

  struct Uplink {
    ClientId id;
    std::size_t depth;
    mask::BinaryMask binary;
    mask::ProbMask floats;
    std::vector<net::WeightMatrix> weights;
    const personalization::PersonalizationIndicator* indicator;
  };
  std::vector<Uplink> uplinks;

  for (ClientId id : log.participants) {
    ClientState& client = clients[id];
    Rng rng_client = Rng::derive(cfg.master_seed, Rng::tag("client"), id, round);
    Rng rng_server = Rng::derive(cfg.master_seed, Rng::tag("server"), id, round);
    Rng rng_privacy =
        Rng::derive(cfg.master_seed, Rng::tag("privacy"), id, round);

    ClientRoundContext ctx = make_round_context(server, client, cfg);
    const mask::ProbMask theta_before =
        mask_training ? mask::probs_from_scores(ctx.scores) : mask::ProbMask{};

    const std::size_t n_train = client.train_idx.size();
    const std::size_t batches_per_epoch =
        n_train == 0 ? 0 : (n_train + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t iterations = cfg.local_epochs * batches_per_epoch;

    if (mask_training &&
        cfg.privacy.mechanism == privacy::Mechanism::kGaussianUpdate) {
      ctx.update_noise_sigma =
          cfg.privacy.sigma > 0.0
              ? cfg.privacy.sigma
              : std::sqrt(privacy::sigma_for_update_noise(
                    static_cast<std::uint32_t>(std::max<std::size_t>(
                        iterations, 1)),
                    cfg.privacy.clip_bound, cfg.privacy.epsilon,
                    cfg.privacy.delta,
                    static_cast<std::uint32_t>(cfg.batch_size)));
    }

    std::vector<std::size_t> order = client.train_idx;
    for (std::size_t epoch = 0; epoch < cfg.local_epochs && n_train > 0;
         ++epoch) {
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng_client.uniform_index(i)]);
      for (std::size_t start = 0; start < order.size();
           start += cfg.batch_size) {
        const std::size_t stop =
            std::min(order.size(), start + cfg.batch_size);
        Batch batch;
        for (std::size_t i = start; i < stop; ++i) {
          batch.features.push_back(&dataset.features[order[i]]);
          batch.labels.push_back(dataset.labels[order[i]]);
        }
        client_local_iteration(ctx, server, batch, cfg, rng_client, rng_server,
                               rng_privacy);
      }
    }

    ClientRoundRecord record;
    record.id = id;
    record.train_loss = ctx.loss_batches > 0
                            ? ctx.loss_sum / static_cast<double>(ctx.loss_batches)
                            : std::numeric_limits<double>::quiet_NaN();

    Uplink up;
    up.id = id;
    up.depth = client.split_depth;
    up.indicator = &client.indicator;

    if (mask_training) {
      mask::ProbMask theta_after = mask::probs_from_scores(ctx.scores);

      if (cfg.personalization && round >= warmup_rounds(cfg)) {
        const personalization::DeltaReport report =
            personalization::compute_delta(theta_before, theta_after);
        const std::size_t d =
            mask::total_params(mask::shapes_of(ctx.bottom));
        client.indicator = personalization::grow_indicator(
            client.indicator, report, growth_increment(cfg, d),
            cfg.ratio_cap);
      }
      client.theta_local = theta_after;

      mask::ProbMask theta_up = theta_after;
      if (cfg.privacy.mechanism == privacy::Mechanism::kGaussianMask) {
        const double sigma =
            cfg.privacy.sigma > 0.0
                ? cfg.privacy.sigma
                : std::sqrt(privacy::sigma_for_mask_noise(
                      cfg.privacy.clip_c, cfg.privacy.epsilon,
                      cfg.privacy.delta));
        theta_up = privacy::noisy_mask_probs(theta_up, sigma,
                                             cfg.privacy.clip_c, rng_privacy);
      }

      const mask::Shapes bottom_shapes = mask::shapes_of(ctx.bottom);
      if (cfg.uplink == UplinkFormat::kBinaryMask) {
        up.binary = mask::sample_mask(theta_up, rng_client);
        record.uplink_mask = up.binary;
        ctx.traffic.up_model += wire::mask_wire_bytes(bottom_shapes);
      } else {
        up.floats = theta_up;
        ctx.traffic.up_model += wire::dense_wire_bytes(bottom_shapes);
      }
      if (cfg.personalization)
        ctx.traffic.up_indicator += wire::mask_wire_bytes(bottom_shapes);
      ctx.traffic.down_model += wire::dense_wire_bytes(bottom_shapes);
    } else {
      up.weights = ctx.bottom.layers;
      const mask::Shapes bottom_shapes = mask::shapes_of(ctx.bottom);
      ctx.traffic.up_model += wire::dense_wire_bytes(bottom_shapes);
      ctx.traffic.down_model += wire::dense_wire_bytes(bottom_shapes);
      client.bottom_weights = ctx.bottom;
    }

    record.traffic = ctx.traffic;
    log.records.push_back(std::move(record));
    uplinks.push_back(std::move(up));
  }

  // Server-side mask trace, available to compensation and the round log.
  log.server_trace.layer_theta.assign(total_layers, std::nullopt);
  if (mask_training && cfg.top_mode == TopMode::kMasks) {
    for (std::size_t li = 0; li < total_layers; ++li)
      if (server.srv_layer_active[li])
        log.server_trace.layer_theta[li] =
            net::logistic(server.srv_scores.layers[li]);
  }

  log.layer_participant_counts.assign(total_layers, 0);
  for (const auto& up : uplinks)
    for (std::size_t li = 0; li < up.depth; ++li)
      ++log.layer_participant_counts[li];

  if (mask_training) {
    mask::ProbMask theta_next = server.theta;
    for (std::size_t li = 0; li < total_layers; ++li) {
      std::vector<const mask::BinaryMask*> layer_masks;
      std::vector<const personalization::PersonalizationIndicator*> layer_inds;
      std::vector<mask::BinaryMask> mask_slices;
      std::vector<personalization::PersonalizationIndicator> ind_slices;
      std::vector<double> float_mean;
      std::size_t float_count = 0;

      for (const auto& up : uplinks) {
        if (up.depth <= li) continue;
        if (cfg.uplink == UplinkFormat::kBinaryMask) {
          mask::BinaryMask ms;
          ms.layers.push_back(up.binary.layers[li]);
          mask_slices.push_back(std::move(ms));
          personalization::PersonalizationIndicator is;
          is.layers.push_back(up.indicator->layers[li]);
          ind_slices.push_back(std::move(is));
        } else {
          if (float_mean.empty())
            float_mean.assign(up.floats.layers[li].size(), 0.0);
          for (std::size_t k = 0; k < float_mean.size(); ++k)
            float_mean[k] += up.floats.layers[li][k];
          ++float_count;
        }
      }

      std::vector<double> client_update;
      bool have_client_update = false;
      if (cfg.uplink == UplinkFormat::kBinaryMask && !mask_slices.empty()) {
        for (std::size_t i = 0; i < mask_slices.size(); ++i) {
          layer_masks.push_back(&mask_slices[i]);
          layer_inds.push_back(&ind_slices[i]);
        }
        mask::ProbMask prev_slice;
        prev_slice.layers.push_back(server.theta.layers[li]);
        client_update = personalization::hetero_aggregate(layer_masks,
                                                          layer_inds,
                                                          prev_slice)
                            .layers[0];
        have_client_update = true;
      } else if (float_count > 0) {
        for (double& v : float_mean) v /= static_cast<double>(float_count);
        client_update = std::move(float_mean);
        have_client_update = true;
      }

      const std::size_t layer_k = log.layer_participant_counts[li];
      const std::size_t total_k = log.participants.size();
      if (cfg.compensation && layer_k < total_k) {
        const auto& sl = log.server_trace.layer_theta[li];
        if (!sl.has_value())
          fail(ErrorCode::kProtocol,
               "compensation: no server update for layer " +
                   std::to_string(li + 1));
        compensation::LayerUpdatePair pair;
        pair.layer = li + 1;
        pair.server_update = *sl;
        pair.client_update = have_client_update ? client_update
                                                : server.theta.layers[li];
        pair.layer_participants = layer_k;
        pair.total_participants = total_k;
        theta_next.layers[li] = compensation::compensate(pair);
      } else if (have_client_update) {
        theta_next.layers[li] = std::move(client_update);
      }
      // No contributors and no compensation: the previous value stays.
    }
    server.theta = std::move(theta_next);
  } else {
    // FedAvg over the bottom layers each participant trained.
    for (std::size_t li = 0; li < total_layers; ++li) {
      std::vector<double> acc;
      std::size_t count = 0;
      for (const auto& up : uplinks) {
        if (up.depth <= li) continue;
        if (acc.empty()) acc.assign(up.weights[li].values.size(), 0.0);
        for (std::size_t k = 0; k < acc.size(); ++k)
          acc[k] += up.weights[li].values[k];
        ++count;
      }
      if (count == 0) continue;
      net::WeightMatrix& w = server.model.layers[li];
      if (w.frozen)
        fail(ErrorCode::kInternal, "attempted update of frozen weights");
      for (std::size_t k = 0; k < acc.size(); ++k)
        w.values[k] = acc[k] / static_cast<double>(count);
    }
  }

  log.theta_after = server.theta;
  server.round += 1;
  return log;
}

RoundLog splitfed_weight_baseline(ServerState& server,
                                  std::vector<ClientState>& clients,
                                  const data::Dataset& dataset,
                                  const ProtocolConfig& cfg) {
  ProtocolConfig weights_cfg = cfg;
  weights_cfg.training = TrainingMode::kWeights;
  weights_cfg.uplink = UplinkFormat::kWeights;
  weights_cfg.top_mode = TopMode::kWeights;
  weights_cfg.personalization = false;
  weights_cfg.compensation = false;
  return run_round(server, clients, dataset, weights_cfg);
}

double evaluate_client(const ServerState& server, const ClientState& client,
                       const data::Dataset& dataset,
                       const ProtocolConfig& cfg) {
  if (client.test_idx.empty())
    return std::numeric_limits<double>::quiet_NaN();
  const std::size_t depth = client.split_depth;
  const std::size_t total_layers = server.model.depth();
  const net::DenseStack bottom = slice_stack(server.model, 0, depth);
  const net::DenseStack top = slice_stack(server.model, depth, total_layers);

  const bool mask_training = cfg.training == TrainingMode::kMasks;
  mask::BinaryMask bottom_mask, top_mask;
  if (mask_training) {
    mask::ProbMask merged = merge_theta(slice_theta(server.theta, 0, depth),
                                        client.theta_local, client.indicator);
    mask::ProbMask top_theta = slice_theta(server.theta, depth, total_layers);
    if (cfg.eval_mask == EvalMaskMode::kSample) {
      Rng rng = Rng::derive(cfg.master_seed, Rng::tag("eval"), client.id,
                            server.round);
      bottom_mask = mask::sample_mask(merged, rng);
      top_mask = mask::sample_mask(top_theta, rng);
    } else {
      bottom_mask = mask::map_mask(merged);
      top_mask = mask::map_mask(top_theta);
    }
  }

  std::size_t correct = 0;
  for (std::size_t idx : client.test_idx) {
    const std::vector<double>& x = dataset.features[idx];
    std::vector<double> hidden;
    if (mask_training)
      hidden = mask::masked_forward(bottom, bottom_mask, x).values;
    else
      hidden = net::stack_forward(bottom, x);
    std::vector<double> logits;
    if (top.layers.empty()) {
      logits = std::move(hidden);
    } else if (mask_training && cfg.top_mode == TopMode::kMasks) {
      logits = mask::masked_forward(top, top_mask, hidden).values;
    } else {
      logits = net::stack_forward(top, hidden);
    }
    const std::size_t pred = static_cast<std::size_t>(
        std::max_element(logits.begin(), logits.end()) - logits.begin());
    if (pred == dataset.labels[idx]) ++correct;
  }
  return static_cast<double>(correct) /
         static_cast<double>(client.test_idx.size());
}

std::uint64_t theta_hash(const mask::ProbMask& theta) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& layer : theta.layers)
    h = fnv1a_bytes(layer.data(), layer.size() * sizeof(double), h);
  return h;
}

}  // namespace pmsfl::protocol
