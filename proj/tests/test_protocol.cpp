#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "pmsfl/error.hpp"
#include "pmsfl/protocol.hpp"
#include "pmsfl/wire.hpp"

using namespace pmsfl;

namespace {

struct TestWorld {
  data::Dataset dataset;
  protocol::ServerState server;
  std::vector<protocol::ClientState> clients;
  protocol::ProtocolConfig cfg;
};

TestWorld make_world(std::size_t n_clients, std::vector<std::size_t> dims,
                     std::vector<std::size_t> depths, std::uint64_t seed,
                     protocol::TrainingMode training) {
  TestWorld world;
  data::DatasetSpec spec;
  spec.classes = dims.back();
  spec.dim = dims.front();
  spec.samples_per_class = 24;
  spec.noise = 0.4;
  spec.seed = seed;
  world.dataset = data::synthetic_dataset(spec);

  bool mixed = false;
  for (std::size_t d : depths)
    if (d != depths.front()) mixed = true;
  const std::size_t frozen_depth = mixed ? dims.size() - 1 : depths.front();
  world.server = protocol::init_server(
      protocol::build_mlp(dims, seed + 1,
                          training == protocol::TrainingMode::kWeights),
      training, frozen_depth);
  if (mixed && training == protocol::TrainingMode::kMasks)
    world.cfg.top_mode = protocol::TopMode::kMasks;

  Rng rng(seed + 2);
  auto parts = data::dirichlet_partition(world.dataset.labels, n_clients, 5.0,
                                         rng);
  for (std::size_t i = 0; i < n_clients; ++i) {
    protocol::ClientState client;
    client.id = i;
    client.split_depth = depths[i % depths.size()];
    auto split = data::train_test_split(parts[i], 0.8, rng);
    client.train_idx = std::move(split.train);
    client.test_idx = std::move(split.test);
    if (training == protocol::TrainingMode::kMasks) {
      mask::Shapes shapes;
      for (std::size_t li = 0; li < client.split_depth; ++li)
        shapes.push_back({world.server.model.layers[li].rows,
                          world.server.model.layers[li].cols});
      client.theta_local = mask::ProbMask::constant(shapes, 0.5);
      client.indicator =
          personalization::PersonalizationIndicator::zeros(shapes);
    }
    world.clients.push_back(std::move(client));
  }

  world.cfg.training = training;
  world.cfg.uplink = training == protocol::TrainingMode::kMasks
                         ? protocol::UplinkFormat::kBinaryMask
                         : protocol::UplinkFormat::kWeights;
  world.cfg.participants_per_round = n_clients;
  world.cfg.total_rounds = 10;
  world.cfg.batch_size = 8;
  world.cfg.local_epochs = 1;
  world.cfg.lr = 0.01;
  world.cfg.master_seed = seed;
  return world;
}

}  // namespace

TEST_CASE("sample_participants basics") {
  Rng rng(1);
  const auto all = protocol::sample_participants(10, 10, rng);
  for (std::size_t i = 0; i < 10; ++i) CHECK(all[i] == i);

  Rng a(2), b(2);
  CHECK(protocol::sample_participants(100, 10, a) ==
        protocol::sample_participants(100, 10, b));

  CHECK_THROWS_AS(protocol::sample_participants(5, 6, rng), Error);
  CHECK_THROWS_AS(protocol::sample_participants(5, 0, rng), Error);
}

TEST_CASE("sample_participants is uniform") {
  Rng rng(3);
  std::vector<double> hits(100, 0.0);
  const std::size_t rounds = 10000;
  for (std::size_t r = 0; r < rounds; ++r)
    for (auto id : protocol::sample_participants(100, 10, rng))
      hits[id] += 1.0;
  const double se = std::sqrt(0.1 * 0.9 / double(rounds));
  for (double h : hits) CHECK(std::abs(h / rounds - 0.1) <= 3.0 * se);
}

TEST_CASE("aggregate_binary_masks examples") {
  mask::BinaryMask m1, m2;
  m1.layers = {{1, 0}};
  m2.layers = {{1, 1}};
  const auto theta = protocol::aggregate_binary_masks({&m1, &m2});
  CHECK(theta.layers[0][0] == 1.0);
  CHECK(theta.layers[0][1] == 0.5);

  const auto same = protocol::aggregate_binary_masks({&m1, &m1, &m1});
  CHECK(same.layers[0][0] == 1.0);
  CHECK(same.layers[0][1] == 0.0);

  CHECK_THROWS_AS(protocol::aggregate_binary_masks({}), Error);
}

TEST_CASE("mask aggregation estimator is unbiased with bounded error") {
  // d = 8, K = 2, theta = 0.3; E|theta_hat - theta|^2 = d theta(1-theta)/K.
  const std::size_t d = 8, k = 2, reps = 10000;
  mask::Shapes shapes{{1, d}};
  const auto theta = mask::ProbMask::constant(shapes, 0.3);
  Rng rng(90210);
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t rep = 0; rep < reps; ++rep) {
    std::vector<mask::BinaryMask> masks;
    std::vector<const mask::BinaryMask*> ptrs;
    for (std::size_t i = 0; i < k; ++i)
      masks.push_back(mask::sample_mask(theta, rng));
    for (const auto& m : masks) ptrs.push_back(&m);
    const auto est = protocol::aggregate_binary_masks(ptrs);
    double err2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double e = est.layers[0][j] - 0.3;
      err2 += e * e;
    }
    sum += err2;
    sum_sq += err2 * err2;
  }
  const double mean = sum / reps;
  const double var = sum_sq / reps - mean * mean;
  const double se = std::sqrt(var / reps);
  const double expected = d * 0.3 * 0.7 / double(k);
  CHECK(mean <= double(d) / (4.0 * k));
  CHECK(std::abs(mean - expected) <= 2.0 * se);
}

TEST_CASE("client_local_iteration leaves scores unchanged on a loss plateau") {
  // Saturated correct logits make the returned gradient vanish.
  TestWorld world = make_world(1, {2, 2}, {1}, 41, protocol::TrainingMode::kMasks);
  auto& w = world.server.model.layers[0];
  w.values = {30.0, 0.0, 0.0, -30.0};

  protocol::ClientRoundContext ctx =
      protocol::make_round_context(world.server, world.clients[0], world.cfg);
  const auto scores_before = ctx.scores;

  protocol::Batch batch;
  const std::vector<double> x{1.0, 1.0};
  batch.features = {&x};
  batch.labels = {0};
  Rng rc(1), rs(2), rp(3);
  protocol::client_local_iteration(ctx, world.server, batch, world.cfg, rc, rs,
                                   rp);
  for (std::size_t li = 0; li < ctx.scores.layers.size(); ++li)
    for (std::size_t k = 0; k < ctx.scores.layers[li].size(); ++k)
      CHECK(std::abs(ctx.scores.layers[li][k] -
                     scores_before.layers[li][k]) <= 1e-9);
}

TEST_CASE("client_local_iteration matches a composed scalar oracle") {
  TestWorld world =
      make_world(1, {3, 4, 2}, {1}, 42, protocol::TrainingMode::kMasks);
  world.cfg.lr = 1.0;
  world.cfg.top_mode = protocol::TopMode::kWeights;

  const auto w0 = world.server.model.layers[0];  // bottom, frozen
  const auto w1 = world.server.model.layers[1];  // top before the update

  protocol::ClientRoundContext ctx =
      protocol::make_round_context(world.server, world.clients[0], world.cfg);
  const auto scores0 = ctx.scores;

  const std::vector<double> x{0.3, -1.2, 0.8};
  const std::size_t label = 1;
  protocol::Batch batch;
  batch.features = {&x};
  batch.labels = {label};

  Rng rc(11), rs(12), rp(13);
  const auto result = protocol::client_local_iteration(ctx, world.server,
                                                       batch, world.cfg, rc,
                                                       rs, rp);

  // Oracle replay with plain loops, using the recorded sampled mask.
  const auto& m = result.sampled_mask.layers[0];
  std::vector<double> h_pre(4, 0.0);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      if (m[i * 3 + j]) h_pre[i] += w0.at(i, j) * x[j];
  std::vector<double> h(4);
  for (std::size_t i = 0; i < 4; ++i) h[i] = h_pre[i] > 0.0 ? h_pre[i] : 0.0;

  std::vector<double> logits(2, 0.0);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) logits[i] += w1.at(i, j) * h[j];
  const double mx = std::max(logits[0], logits[1]);
  const double z = std::exp(logits[0] - mx) + std::exp(logits[1] - mx);
  std::vector<double> g_logits(2);
  for (std::size_t i = 0; i < 2; ++i)
    g_logits[i] = std::exp(logits[i] - mx) / z - (i == label ? 1.0 : 0.0);

  std::vector<double> g_h(4, 0.0);
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t i = 0; i < 2; ++i) g_h[j] += w1.at(i, j) * g_logits[i];

  for (std::size_t i = 0; i < 4; ++i) {
    const double gate = h_pre[i] > 0.0 ? 1.0 : 0.0;
    for (std::size_t j = 0; j < 3; ++j) {
      const std::size_t k = i * 3 + j;
      const double sig = 1.0 / (1.0 + std::exp(-scores0.layers[0][k]));
      const double grad =
          g_h[i] * gate * x[j] * w0.at(i, j) * sig * sig * (1.0 - sig);
      const double expect = scores0.layers[0][k] - grad;  // lr = 1, |Q| = 1
      CHECK(std::abs(ctx.scores.layers[0][k] - expect) <= 1e-10);
    }
  }

  // The returned gradient is the pre-update top-model input gradient.
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(std::abs(result.returned_grads[0][j] - g_h[j]) <= 1e-12);

  // Server applied one SGD step on the top weights.
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      const double expect = w1.at(i, j) - 1.0 * g_logits[i] * h[j];
      CHECK(std::abs(world.server.model.layers[1].at(i, j) - expect) <= 1e-12);
    }
}

TEST_CASE("identical seed streams give identical iterations") {
  TestWorld world =
      make_world(1, {3, 4, 2}, {1}, 43, protocol::TrainingMode::kMasks);

  auto run_once = [&](TestWorld w) {
    protocol::ClientRoundContext ctx =
        protocol::make_round_context(w.server, w.clients[0], w.cfg);
    const std::vector<double> x{1.0, 0.5, -0.5};
    protocol::Batch batch;
    batch.features = {&x};
    batch.labels = {0};
    Rng rc(7), rs(8), rp(9);
    protocol::client_local_iteration(ctx, w.server, batch, w.cfg, rc, rs, rp);
    return ctx.scores;
  };
  const auto s1 = run_once(world);
  const auto s2 = run_once(world);
  CHECK(s1.layers == s2.layers);
}

TEST_CASE("run_round with zero local iterations aggregates a fresh sample") {
  TestWorld world =
      make_world(1, {4, 3}, {1}, 44, protocol::TrainingMode::kMasks);
  world.cfg.local_epochs = 0;
  world.cfg.participants_per_round = 1;

  const auto log = protocol::run_round(world.server, world.clients,
                                       world.dataset, world.cfg);
  REQUIRE(log.records.size() == 1);
  const auto& bits = log.records[0].uplink_mask.layers[0];
  for (std::size_t k = 0; k < bits.size(); ++k)
    CHECK(world.server.theta.layers[0][k] == double(bits[k]));
}

TEST_CASE("round log accounts mask bytes exactly") {
  TestWorld world =
      make_world(2, {2, 2}, {1}, 45, protocol::TrainingMode::kMasks);
  world.cfg.local_epochs = 1;
  world.cfg.batch_size = 4;
  const auto log = protocol::run_round(world.server, world.clients,
                                       world.dataset, world.cfg);
  const mask::Shapes shapes{{2, 2}};  // d = 4
  for (const auto& rec : log.records) {
    CHECK(rec.traffic.up_model == wire::mask_wire_bytes(shapes));
    CHECK(rec.traffic.up_model == wire::header_bytes(shapes) + 1);
    CHECK(rec.traffic.down_model == wire::dense_wire_bytes(shapes));
    CHECK(rec.traffic.up_smashed > 0);
    CHECK(rec.traffic.down_grad > 0);
  }
}

TEST_CASE("full rounds are a pure function of the master seed") {
  auto run_two_rounds = [](std::uint64_t seed) {
    TestWorld world =
        make_world(3, {3, 4, 3}, {1, 2}, seed, protocol::TrainingMode::kMasks);
    world.cfg.participants_per_round = 2;
    std::vector<std::uint64_t> hashes;
    for (int r = 0; r < 2; ++r) {
      const auto log = protocol::run_round(world.server, world.clients,
                                           world.dataset, world.cfg);
      hashes.push_back(protocol::theta_hash(log.theta_after));
    }
    return hashes;
  };
  CHECK(run_two_rounds(46) == run_two_rounds(46));
  CHECK(run_two_rounds(46) != run_two_rounds(47));
}

TEST_CASE("frozen bottom weights are byte-identical after mask training") {
  TestWorld world =
      make_world(2, {3, 4, 3}, {1, 2}, 48, protocol::TrainingMode::kMasks);
  world.cfg.top_mode = protocol::TopMode::kMasks;
  std::vector<std::vector<double>> before;
  for (const auto& w : world.server.model.layers) before.push_back(w.values);
  for (int r = 0; r < 3; ++r)
    protocol::run_round(world.server, world.clients, world.dataset, world.cfg);
  for (std::size_t li = 0; li < before.size(); ++li)
    CHECK(std::memcmp(before[li].data(),
                      world.server.model.layers[li].values.data(),
                      before[li].size() * sizeof(double)) == 0);
}

TEST_CASE("splitfed baseline aggregation") {
  // Single participant: the global bottom becomes its trained weights.
  TestWorld world =
      make_world(1, {3, 4, 2}, {2}, 49, protocol::TrainingMode::kWeights);
  const auto log = protocol::splitfed_weight_baseline(
      world.server, world.clients, world.dataset, world.cfg);
  REQUIRE(log.records.size() == 1);
  for (std::size_t li = 0; li < 2; ++li)
    CHECK(world.server.model.layers[li].values ==
          world.clients[0].bottom_weights.layers[li].values);

  // Two clients: the aggregate is the mean of their trained weights.
  TestWorld pair =
      make_world(2, {3, 4, 2}, {2}, 50, protocol::TrainingMode::kWeights);
  protocol::splitfed_weight_baseline(pair.server, pair.clients, pair.dataset,
                                     pair.cfg);
  for (std::size_t li = 0; li < 2; ++li) {
    const auto& a = pair.clients[0].bottom_weights.layers[li].values;
    const auto& b = pair.clients[1].bottom_weights.layers[li].values;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const double mean = 0.5 * (a[k] + b[k]);
      CHECK(pair.server.model.layers[li].values[k] ==
            doctest::Approx(mean).epsilon(1e-15));
    }
  }
}

TEST_CASE("splitfed baseline converges on a toy task") {
  TestWorld world =
      make_world(2, {4, 8, 3}, {2}, 51, protocol::TrainingMode::kWeights);
  world.cfg.lr = 0.05;
  world.cfg.batch_size = 16;
  std::vector<double> losses;
  for (int r = 0; r < 200; ++r) {
    const auto log = protocol::run_round(world.server, world.clients,
                                         world.dataset, world.cfg);
    double loss = 0.0;
    for (const auto& rec : log.records) loss += rec.train_loss;
    losses.push_back(loss / double(log.records.size()));
  }
  // 10-round moving average decreases throughout.
  std::vector<double> smooth;
  for (std::size_t t = 0; t + 10 <= losses.size(); ++t) {
    double acc = 0.0;
    for (std::size_t i = t; i < t + 10; ++i) acc += losses[i];
    smooth.push_back(acc / 10.0);
  }
  // Monotone at 1e-3 resolution: jitter at the near-zero plateau stays
  // within that band.
  std::size_t violations = 0;
  for (std::size_t t = 1; t < smooth.size(); ++t)
    if (smooth[t] > smooth[t - 1] + 1e-3) ++violations;
  CHECK(violations == 0);
  CHECK(smooth.back() < 0.5 * smooth.front());

  // Trained accuracy is meaningfully above chance.
  double acc = 0.0;
  for (const auto& client : world.clients)
    acc += protocol::evaluate_client(world.server, client, world.dataset,
                                     world.cfg);
  CHECK(acc / world.clients.size() > 0.6);
}

TEST_CASE("protocol error on smashed-data width drift") {
  TestWorld world =
      make_world(1, {3, 4, 2}, {1}, 52, protocol::TrainingMode::kMasks);
  protocol::ClientRoundContext ctx =
      protocol::make_round_context(world.server, world.clients[0], world.cfg);
  // Drop the bottom layer so the smashed width no longer matches the top.
  ctx.bottom.layers.clear();
  ctx.bottom.relu_after.clear();
  net::WeightMatrix tiny(2, 3);
  tiny.frozen = true;
  ctx.bottom.layers.push_back(tiny);
  ctx.bottom.relu_after.push_back(1);
  ctx.scores.layers = {std::vector<double>(6, 0.0)};

  const std::vector<double> x{1.0, 0.0, 0.0};
  protocol::Batch batch;
  batch.features = {&x};
  batch.labels = {0};
  Rng rc(1), rs(2), rp(3);
  CHECK_THROWS_AS(protocol::client_local_iteration(ctx, world.server, batch,
                                                   world.cfg, rc, rs, rp),
                  Error);
}

TEST_CASE("growth schedule honors warmup and cap") {
  protocol::ProtocolConfig cfg;
  cfg.total_rounds = 100;
  cfg.warmup_fraction = 0.1;
  cfg.ratio_cap = 0.5;
  CHECK(protocol::warmup_rounds(cfg) == 10);
  CHECK(protocol::growth_increment(cfg, 1536) ==
        std::size_t(std::ceil(768.0 / 90.0)));
}
