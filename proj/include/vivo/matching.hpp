#pragma once

#include "vivo/batch.hpp"
#include "vivo/types.hpp"

#include <vector>

namespace vivo {

/// Minimum-cost assignment: perm[i] is the target index matched to
/// prediction i. total_cost is the assignment objective (sum of matched
/// cost entries); loss is the cross-entropy evaluated at the assignment
/// and is filled in by vivo_loss.
struct AssignmentResult {
  std::vector<int> perm;
  double total_cost = 0.0;
  double loss = 0.0;
};

// Kuhn-Munkres, O(n^3) core. Among cost-equal optima (within 1e-9 of the
// optimum) the lexicographically smallest permutation is returned, so
// results are reproducible. Throws NonSquare / NonFinite.
AssignmentResult hungarian(const Matrix& cost);

struct VivoLossResult {
  double loss = 0.0;
  // Block-level assignment over the masked blocks listed in ascending
  // block-id order: assignment.perm[i] = index (same ordering) of the
  // target block matched to the i-th masked block's slots.
  AssignmentResult assignment;
  // Per mask slot, in slot order: the target token id the slot was scored
  // against. This is what the trainer differentiates through (the
  // assignment itself is a constant of the forward pass).
  std::vector<int> slot_targets;
};

// Set-matching masked-tag loss. Blocks are partitioned by token length;
// within each equal-length group a block cost matrix (sum over aligned
// token positions of 1 - p(token)) is solved by hungarian; blocks of
// distinct lengths can never trade places. The reported loss is the
// negative log likelihood at the chosen assignment.
//
// probs[i] is the predicted vocab distribution for slots[i]. blocks is the
// batch's tag list and is used to verify every masked block is complete
// (BlockLengthMismatch otherwise). Throws EmptyPlan when no slot is given.
VivoLossResult vivo_loss(const std::vector<Vector>& probs,
                         const std::vector<MaskSlot>& slots,
                         const std::vector<TagBlock>& blocks);

// Plain ordered masked-LM loss: sum of -log p_i(target_i) with targets in
// their original positions. Used for caption fine-tuning and as the
// "w/o Hungarian matching" ablation.
double mlm_loss(const std::vector<Vector>& probs,
                const std::vector<MaskSlot>& slots);

}  // namespace vivo
