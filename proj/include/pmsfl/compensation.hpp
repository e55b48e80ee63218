#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

namespace pmsfl::compensation {

using ClientId = std::size_t;

// client id -> split depth (number of bottom layers), fixed for a run.
struct SplitAssignment {
  std::map<ClientId, std::size_t> depth;

  std::size_t depth_of(ClientId id) const;
  std::size_t max_depth() const;
  bool uniform() const;
};

// Capacity tiers map directly to depths (tier k holds k bottom layers);
// a tier outside [1, total_layers] is rejected.
SplitAssignment assign_splits(const std::map<ClientId, std::size_t>& capacities,
                              std::size_t total_layers);

// Participants whose bottom submodel includes layer l (1-based).
std::vector<ClientId> layer_participants(const std::vector<ClientId>& participants,
                                         const SplitAssignment& splits,
                                         std::size_t layer);

struct LayerUpdatePair {
  std::size_t layer = 0;                    // 1-based
  std::vector<double> server_update;        // (theta^l)^sl
  std::vector<double> client_update;        // (theta^l)^client
  std::size_t layer_participants = 0;       // |K^l_t|
  std::size_t total_participants = 0;       // |K_t|
};

// theta^l = (1 - |K^l|/|K|) * server + (|K^l|/|K|) * client. The all- and
// no-participant ends return the corresponding input bit-for-bit.
std::vector<double> compensate(const LayerUpdatePair& pair);

// Server-side mask updates per layer, recorded during Step 2.2 when the
// top model trains probabilistic masks. nullopt marks a layer that was
// never server-resident this round.
struct ServerMaskTrace {
  std::vector<std::optional<std::vector<double>>> layer_theta;  // 0-based
};

const std::optional<std::vector<double>>& server_mask_update_for_layer(
    const ServerMaskTrace& trace, std::size_t layer);  // 1-based

}  // namespace pmsfl::compensation
