#include "pmsfl/compensation.hpp"

#include <string>

#include "pmsfl/error.hpp"

namespace pmsfl::compensation {

std::size_t SplitAssignment::depth_of(ClientId id) const {
  auto it = depth.find(id);
  if (it == depth.end())
    fail(ErrorCode::kInvalidConfig,
         "split assignment: unknown client " + std::to_string(id));
  return it->second;
}

std::size_t SplitAssignment::max_depth() const {
  std::size_t d = 0;
  for (const auto& [id, dep] : depth) d = std::max(d, dep);
  return d;
}

bool SplitAssignment::uniform() const {
  if (depth.empty()) return true;
  const std::size_t first = depth.begin()->second;
  for (const auto& [id, dep] : depth)
    if (dep != first) return false;
  return true;
}

SplitAssignment assign_splits(const std::map<ClientId, std::size_t>& capacities,
                              std::size_t total_layers) {
  if (capacities.empty())
    fail(ErrorCode::kInvalidConfig, "assign_splits: empty client set");
  SplitAssignment out;
  for (const auto& [id, tier] : capacities) {
    if (tier < 1 || tier > total_layers)
      fail(ErrorCode::kInvalidConfig,
           "assign_splits: tier " + std::to_string(tier) + " for client " +
               std::to_string(id) + " outside [1, " +
               std::to_string(total_layers) + "]");
    out.depth[id] = tier;
  }
  return out;
}

std::vector<ClientId> layer_participants(const std::vector<ClientId>& participants,
                                         const SplitAssignment& splits,
                                         std::size_t layer) {
  if (layer < 1)
    fail(ErrorCode::kInvalidConfig, "layer_participants: layer is 1-based");
  std::vector<ClientId> out;
  for (ClientId id : participants)
    if (splits.depth_of(id) >= layer) out.push_back(id);
  return out;
}

std::vector<double> compensate(const LayerUpdatePair& pair) {
  if (pair.total_participants == 0)
    fail(ErrorCode::kInvalidConfig, "compensate: no participants");
  if (pair.layer_participants > pair.total_participants)
    fail(ErrorCode::kInvalidConfig, "compensate: |K^l| > |K|");
  if (pair.server_update.size() != pair.client_update.size())
    fail(ErrorCode::kInvalidShape, "compensate: update lengths differ");
  if (pair.layer_participants == pair.total_participants)
    return pair.client_update;
  if (pair.layer_participants == 0) return pair.server_update;
  const double w_client = static_cast<double>(pair.layer_participants) /
                          static_cast<double>(pair.total_participants);
  const double w_server = 1.0 - w_client;
  std::vector<double> out(pair.server_update.size());
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = w_server * pair.server_update[k] + w_client * pair.client_update[k];
  return out;
}

const std::optional<std::vector<double>>& server_mask_update_for_layer(
    const ServerMaskTrace& trace, std::size_t layer) {
  if (layer < 1 || layer > trace.layer_theta.size())
    fail(ErrorCode::kInvalidConfig,
         "server_mask_update_for_layer: layer " + std::to_string(layer) +
             " out of range");
  return trace.layer_theta[layer - 1];
}

}  // namespace pmsfl::compensation
