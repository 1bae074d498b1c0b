#pragma once

#include "vivo/tokenizer.hpp"
#include "vivo/types.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace vivo {

/// One detected image region: appearance vector plus normalized geometry
/// (x1, y1, x2, y2, w, h), all in [0, 1].
struct Region {
  Vector appearance;
  Eigen::Matrix<double, 6, 1> box;

  // Checks the geometric invariants (ordering, range, w/h consistency
  // within 1e-6) and the appearance width.
  void validate(int d_app) const;
};

enum class MaskAction { Mask, Random, Keep };

constexpr int kNoBlock = -1;

/// One masked position: where, what replacement happened, and the original
/// token that prediction is scored against.
struct MaskSlot {
  int position = 0;           // index into the text segment
  MaskAction action = MaskAction::Mask;
  int target_id = 0;          // pre-replacement token id
  int block = kNoBlock;       // owning TagBlock index, kNoBlock for caption slots
};

enum class BatchMode { Pretrain, Finetune, Infer };

enum class PretrainMasking {
  TagGranular,  // whole tags until the 15% token budget is met
  SingleToken,  // exactly one tag token (the "mask only one token" ablation)
};

struct BatchConfig {
  int d_app = 16;
  int max_regions = 50;
  int max_tag_tokens = 15;   // pre-training cap on tag tokens
  int max_caption = 40;      // fine-tuning cap on caption word tokens
  int max_tags = 30;         // fine-tuning cap on tag tokens
  double mask_rate = 0.15;
  std::array<double, 3> mask_action_probs = {0.8, 0.1, 0.1};
  PretrainMasking pretrain_masking = PretrainMasking::TagGranular;
  // Opt-in: include the caption's terminal [SEP] in the fine-tuning mask
  // pool so end-of-sentence prediction gets trained. Off by default; the
  // default mask budget counts caption word tokens only.
  bool mask_caption_eos = false;

  // Fine-tune/infer text layout: caption span occupies positions
  // [0, max_caption + 2), the tag span starts at a fixed base so that tag
  // position embeddings do not shift as the caption grows during decoding.
  int tag_position_base() const { return max_caption + 2; }
};

/// Fused text+region model input for a single example. Text tokens come
/// first, then K region rows; attention is a boolean (S_text+K)^2 matrix
/// with true = may attend. Builders never emit [PAD]: each example is its
/// own batch, so every invariant about pad rows holds vacuously.
struct EncodedBatch {
  std::vector<int> token_ids;    // S_text
  std::vector<int> segment_ids;  // S_text + K (regions take segment 2)
  std::vector<int> position_ids; // S_text (regions carry no position)
  Matrix regions;                // K x (d_app + 6), appearance then geometry
  BoolMatrix attn_mask;          // (S_text + K)^2
  std::vector<MaskSlot> mask_slots;
  BatchMode mode = BatchMode::Pretrain;

  // Span bookkeeping (half-open ranges over text positions).
  int caption_begin = 0, caption_end = 0;  // includes [CLS] and trailing [SEP]
  int tag_begin = 0, tag_end = 0;          // includes trailing [SEP]

  int text_len() const { return static_cast<int>(token_ids.size()); }
  int n_regions() const { return static_cast<int>(regions.rows()); }
  int total_len() const { return text_len() + n_regions(); }
};

// Tag tokens in the given order, then [SEP], then regions. Bidirectional
// attention. Whole tags are sampled (uniformly, without replacement) until
// the masked token count reaches ceil(mask_rate * tag tokens), minimum one
// tag; each masked token independently draws the 80/10/10 action.
EncodedBatch build_pretrain_batch(const std::vector<TagBlock>& blocks,
                                  const std::vector<Region>& regions,
                                  uint64_t rng_seed, const BatchConfig& config,
                                  const Vocabulary& vocab);

// Same layout with no masking; used by the alignment probe.
EncodedBatch build_pretrain_context(const std::vector<TagBlock>& blocks,
                                    const std::vector<Region>& regions,
                                    const BatchConfig& config,
                                    const Vocabulary& vocab);

// [CLS] caption [SEP] | tags [SEP] | regions. Caption positions attend
// causally within the caption and fully to tags/regions; tag/region
// positions never attend to caption positions. ceil(mask_rate * caption
// tokens) caption tokens are masked uniformly (minimum one).
EncodedBatch build_finetune_batch(const std::vector<int>& caption_ids,
                                  const std::vector<TagBlock>& blocks,
                                  const std::vector<Region>& regions,
                                  uint64_t rng_seed, const BatchConfig& config,
                                  const Vocabulary& vocab);

// Fine-tune layout for a decode step: prefix must start with [CLS] and end
// with [MASK]; the single mask slot is the trailing [MASK] position.
EncodedBatch build_infer_batch(const std::vector<int>& prefix_ids,
                               const std::vector<TagBlock>& blocks,
                               const std::vector<Region>& regions,
                               const BatchConfig& config,
                               const Vocabulary& vocab);

}  // namespace vivo
