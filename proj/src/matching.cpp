#include "vivo/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace vivo {

namespace {

// Shortest-augmenting-path Kuhn-Munkres. Returns only the optimal total
// cost; the lexicographic wrapper below reconstructs the permutation.
double km_min_cost(const Matrix& a) {
  const int n = static_cast<int>(a.rows());
  if (n == 0) return 0.0;
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double cost = 0.0;
  for (int j = 1; j <= n; ++j) cost += a(p[j] - 1, j - 1);
  return cost;
}

// Minimum completion cost assigning rows `row_from..n-1` to the unused
// columns.
double completion_cost(const Matrix& cost, int row_from,
                       const std::vector<char>& col_used) {
  const int n = static_cast<int>(cost.rows());
  const int m = n - row_from;
  if (m == 0) return 0.0;
  std::vector<int> cols;
  cols.reserve(m);
  for (int j = 0; j < n; ++j) {
    if (!col_used[j]) cols.push_back(j);
  }
  Matrix sub(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) sub(i, j) = cost(row_from + i, cols[j]);
  }
  return km_min_cost(sub);
}

}  // namespace

AssignmentResult hungarian(const Matrix& cost) {
  if (cost.rows() != cost.cols()) {
    throw Error(ErrorKind::NonSquare,
                "cost matrix is " + std::to_string(cost.rows()) + "x" +
                    std::to_string(cost.cols()));
  }
  if (!cost.allFinite()) {
    throw Error(ErrorKind::NonFinite, "cost matrix has non-finite entries");
  }
  const int n = static_cast<int>(cost.rows());
  AssignmentResult result;
  result.perm.resize(n);
  if (n == 0) return result;

  const double optimum = km_min_cost(cost);
  const double eps = 1e-9 * (1.0 + std::abs(optimum));

  // Fix rows in order to the smallest column that still admits an optimal
  // completion; this yields the lexicographically smallest optimal
  // permutation.
  std::vector<char> col_used(n, 0);
  double fixed = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (col_used[j]) continue;
      col_used[j] = 1;
      const double rest = completion_cost(cost, i + 1, col_used);
      if (fixed + cost(i, j) + rest <= optimum + eps) {
        result.perm[i] = j;
        fixed += cost(i, j);
        break;
      }
      col_used[j] = 0;
    }
  }
  result.total_cost = fixed;
  return result;
}

namespace {

struct MaskedBlock {
  int block_id = 0;
  std::vector<int> slot_indices;  // into the slots vector, position order
  std::vector<int> target_ids;    // aligned token targets
};

std::vector<MaskedBlock> collect_blocks(const std::vector<MaskSlot>& slots,
                                        const std::vector<TagBlock>& blocks) {
  std::map<int, MaskedBlock> by_id;
  for (size_t s = 0; s < slots.size(); ++s) {
    const MaskSlot& slot = slots[s];
    if (slot.block < 0 || slot.block >= static_cast<int>(blocks.size())) {
      throw Error(ErrorKind::BlockLengthMismatch,
                  "slot references unknown block " + std::to_string(slot.block));
    }
    auto& mb = by_id[slot.block];
    mb.block_id = slot.block;
    mb.slot_indices.push_back(static_cast<int>(s));
  }
  std::vector<MaskedBlock> out;
  out.reserve(by_id.size());
  for (auto& [id, mb] : by_id) {
    std::sort(mb.slot_indices.begin(), mb.slot_indices.end(),
              [&](int a, int b) {
                return slots[a].position < slots[b].position;
              });
    const auto& expect = blocks[id].token_ids;
    if (mb.slot_indices.size() != expect.size()) {
      throw Error(ErrorKind::BlockLengthMismatch,
                  "block " + std::to_string(id) + " has " +
                      std::to_string(mb.slot_indices.size()) +
                      " masked slots but " + std::to_string(expect.size()) +
                      " tokens; pre-training masks whole tags");
    }
    for (size_t q = 0; q < expect.size(); ++q) {
      const MaskSlot& slot = slots[mb.slot_indices[q]];
      if (slot.target_id != expect[q]) {
        throw Error(ErrorKind::BlockLengthMismatch,
                    "slot targets disagree with block " + std::to_string(id));
      }
      mb.target_ids.push_back(slot.target_id);
    }
    out.push_back(std::move(mb));
  }
  return out;
}

double prob_of(const std::vector<Vector>& probs, int slot_index, int token) {
  const Vector& p = probs[slot_index];
  if (token < 0 || token >= p.size()) {
    throw Error(ErrorKind::ShapeMismatch, "target token outside distribution");
  }
  return p[token];
}

}  // namespace

VivoLossResult vivo_loss(const std::vector<Vector>& probs,
                         const std::vector<MaskSlot>& slots,
                         const std::vector<TagBlock>& blocks) {
  if (slots.empty()) {
    throw Error(ErrorKind::EmptyPlan, "no masked slots to score");
  }
  if (probs.size() != slots.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "one distribution per mask slot is required");
  }

  const auto masked = collect_blocks(slots, blocks);
  const int n_blocks = static_cast<int>(masked.size());

  // Partition by token length; only equal-length blocks may trade places.
  std::map<size_t, std::vector<int>> groups;  // length -> indices into masked
  for (int b = 0; b < n_blocks; ++b) {
    groups[masked[b].target_ids.size()].push_back(b);
  }

  VivoLossResult result;
  result.slot_targets.resize(slots.size(), -1);
  result.assignment.perm.assign(n_blocks, -1);

  for (const auto& [len, members] : groups) {
    const int m = static_cast<int>(members.size());
    Matrix cost(m, m);
    for (int s = 0; s < m; ++s) {
      for (int t = 0; t < m; ++t) {
        double c = 0.0;
        for (size_t q = 0; q < len; ++q) {
          c += 1.0 - prob_of(probs, masked[members[s]].slot_indices[q],
                             masked[members[t]].target_ids[q]);
        }
        cost(s, t) = c;
      }
    }
    const AssignmentResult local = hungarian(cost);
    for (int s = 0; s < m; ++s) {
      const int t = local.perm[s];
      result.assignment.perm[members[s]] = members[t];
      result.assignment.total_cost += cost(s, t);
      for (size_t q = 0; q < len; ++q) {
        const int slot_index = masked[members[s]].slot_indices[q];
        const int target = masked[members[t]].target_ids[q];
        result.slot_targets[slot_index] = target;
        result.loss += -std::log(prob_of(probs, slot_index, target));
      }
    }
  }
  result.assignment.loss = result.loss;
  return result;
}

double mlm_loss(const std::vector<Vector>& probs,
                const std::vector<MaskSlot>& slots) {
  if (slots.empty()) {
    throw Error(ErrorKind::EmptyPlan, "no masked slots to score");
  }
  if (probs.size() != slots.size()) {
    throw Error(ErrorKind::ShapeMismatch,
                "one distribution per mask slot is required");
  }
  double loss = 0.0;
  for (size_t i = 0; i < slots.size(); ++i) {
    loss += -std::log(prob_of(probs, static_cast<int>(i), slots[i].target_id));
  }
  return loss;
}

}  // namespace vivo
