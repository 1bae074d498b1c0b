#include "vivo/batch.hpp"

#include "vivo/rng.hpp"

#include <algorithm>
#include <cmath>

namespace vivo {

void Region::validate(int d_app) const {
  if (appearance.size() != d_app) {
    throw Error(ErrorKind::ShapeMismatch,
                "region appearance has " + std::to_string(appearance.size()) +
                    " dims, configured d_app is " + std::to_string(d_app));
  }
  const double x1 = box[0], y1 = box[1], x2 = box[2], y2 = box[3];
  const double w = box[4], h = box[5];
  constexpr double eps = 1e-6;
  auto in_unit = [](double v) { return v >= -1e-9 && v <= 1.0 + 1e-9; };
  if (!in_unit(x1) || !in_unit(y1) || !in_unit(x2) || !in_unit(y2) ||
      x1 > x2 + eps || y1 > y2 + eps) {
    throw Error(ErrorKind::DataError, "region box coordinates out of order or range");
  }
  if (std::abs(w - (x2 - x1)) > eps || std::abs(h - (y2 - y1)) > eps) {
    throw Error(ErrorKind::DataError, "region box width/height inconsistent");
  }
  for (int i = 0; i < appearance.size(); ++i) {
    if (!std::isfinite(appearance[i])) {
      throw Error(ErrorKind::NonFiniteInput, "region appearance is not finite");
    }
  }
}

namespace {

void validate_regions(const std::vector<Region>& regions,
                      const BatchConfig& config) {
  if (static_cast<int>(regions.size()) > config.max_regions) {
    throw Error(ErrorKind::OverLength,
                "region count " + std::to_string(regions.size()) +
                    " exceeds max_regions " + std::to_string(config.max_regions));
  }
  for (const auto& r : regions) r.validate(config.d_app);
}

Matrix pack_regions(const std::vector<Region>& regions, int d_app) {
  Matrix m(static_cast<Eigen::Index>(regions.size()), d_app + 6);
  for (Eigen::Index k = 0; k < m.rows(); ++k) {
    m.row(k).head(d_app) = regions[k].appearance.transpose();
    m.row(k).tail(6) = regions[k].box.transpose();
  }
  return m;
}

int draw_random_token(Rng& rng, const Vocabulary& vocab) {
  // Uniform over non-special tokens (rejection on the id stream).
  int id;
  do {
    id = static_cast<int>(rng.uniform_index(vocab.size()));
  } while (vocab.is_special(id));
  return id;
}

MaskAction draw_action(Rng& rng, const BatchConfig& config) {
  const double u = rng.uniform_real();
  if (u < config.mask_action_probs[0]) return MaskAction::Mask;
  if (u < config.mask_action_probs[0] + config.mask_action_probs[1]) {
    return MaskAction::Random;
  }
  return MaskAction::Keep;
}

// Applies the action to token_ids[position] and records the slot.
void apply_mask(std::vector<int>& token_ids, int position, int block, Rng& rng,
                const BatchConfig& config, const Vocabulary& vocab,
                std::vector<MaskSlot>& slots) {
  MaskSlot slot;
  slot.position = position;
  slot.target_id = token_ids[position];
  slot.block = block;
  slot.action = draw_action(rng, config);
  switch (slot.action) {
    case MaskAction::Mask:
      token_ids[position] = vocab.mask_id();
      break;
    case MaskAction::Random:
      token_ids[position] = draw_random_token(rng, vocab);
      break;
    case MaskAction::Keep:
      break;
  }
  slots.push_back(slot);
}

}  // namespace

EncodedBatch build_pretrain_batch(const std::vector<TagBlock>& blocks,
                                  const std::vector<Region>& regions,
                                  uint64_t rng_seed, const BatchConfig& config,
                                  const Vocabulary& vocab) {
  EncodedBatch batch = build_pretrain_context(blocks, regions, config, vocab);

  int total_tag_tokens = 0;
  std::vector<int> block_start(blocks.size());
  for (size_t b = 0; b < blocks.size(); ++b) {
    block_start[b] = total_tag_tokens;
    total_tag_tokens += static_cast<int>(blocks[b].token_ids.size());
  }

  Rng rng(rng_seed);
  if (config.pretrain_masking == PretrainMasking::SingleToken) {
    const int pos = static_cast<int>(rng.uniform_index(total_tag_tokens));
    int owner = 0;
    while (owner + 1 < static_cast<int>(blocks.size()) &&
           block_start[owner + 1] <= pos) {
      ++owner;
    }
    apply_mask(batch.token_ids, pos, owner, rng, config, vocab,
               batch.mask_slots);
    return batch;
  }

  // Tag-granularity masking: take a uniform permutation of tags and mask
  // whole tags until the token budget is met. Minimum one tag.
  const int budget = static_cast<int>(
      std::ceil(config.mask_rate * static_cast<double>(total_tag_tokens)));
  const auto order = rng.sample_without_replacement(blocks.size(), blocks.size());
  int masked = 0;
  for (size_t tag_idx : order) {
    if (masked >= budget && masked > 0) break;
    const auto& block = blocks[tag_idx];
    for (size_t t = 0; t < block.token_ids.size(); ++t) {
      apply_mask(batch.token_ids, block_start[tag_idx] + static_cast<int>(t),
                 static_cast<int>(tag_idx), rng, config, vocab,
                 batch.mask_slots);
    }
    masked += static_cast<int>(block.token_ids.size());
  }
  std::sort(batch.mask_slots.begin(), batch.mask_slots.end(),
            [](const MaskSlot& a, const MaskSlot& b) {
              return a.position < b.position;
            });
  return batch;
}

EncodedBatch build_pretrain_context(const std::vector<TagBlock>& blocks,
                                    const std::vector<Region>& regions,
                                    const BatchConfig& config,
                                    const Vocabulary& vocab) {
  if (blocks.empty()) {
    throw Error(ErrorKind::EmptyTags, "pre-training input needs at least one tag");
  }
  validate_regions(regions, config);

  EncodedBatch batch;
  batch.mode = BatchMode::Pretrain;
  for (const auto& block : blocks) {
    batch.token_ids.insert(batch.token_ids.end(), block.token_ids.begin(),
                           block.token_ids.end());
  }
  const int tag_tokens = static_cast<int>(batch.token_ids.size());
  if (tag_tokens > config.max_tag_tokens) {
    throw Error(ErrorKind::OverLength,
                std::to_string(tag_tokens) + " tag tokens exceed max_tag_tokens " +
                    std::to_string(config.max_tag_tokens));
  }
  batch.token_ids.push_back(vocab.sep_id());

  const int s_text = batch.text_len();
  const int k = static_cast<int>(regions.size());
  batch.tag_begin = 0;
  batch.tag_end = s_text;
  batch.segment_ids.assign(s_text, 1);
  batch.segment_ids.insert(batch.segment_ids.end(), k, 2);
  batch.position_ids.resize(s_text);
  for (int i = 0; i < s_text; ++i) batch.position_ids[i] = i;
  batch.regions = pack_regions(regions, config.d_app);
  batch.attn_mask = BoolMatrix::Constant(s_text + k, s_text + k, true);
  return batch;
}

namespace {

// Fine-tune/infer attention: causal inside the caption span, caption sees
// tags and regions, tag/region rows never look back at the caption. The
// last rule keeps context representations independent of decode progress.
BoolMatrix finetune_attention(int caption_len, int tag_len, int k) {
  const int s = caption_len + tag_len + k;
  BoolMatrix mask = BoolMatrix::Constant(s, s, true);
  for (int i = 0; i < caption_len; ++i) {
    for (int j = i + 1; j < caption_len; ++j) mask(i, j) = false;
  }
  for (int i = caption_len; i < s; ++i) {
    for (int j = 0; j < caption_len; ++j) mask(i, j) = false;
  }
  return mask;
}

void layout_finetune_text(EncodedBatch& batch, const std::vector<int>& caption_span,
                          const std::vector<TagBlock>& blocks,
                          const BatchConfig& config, const Vocabulary& vocab) {
  batch.token_ids = caption_span;
  batch.caption_begin = 0;
  batch.caption_end = static_cast<int>(caption_span.size());

  batch.tag_begin = batch.caption_end;
  for (const auto& block : blocks) {
    batch.token_ids.insert(batch.token_ids.end(), block.token_ids.begin(),
                           block.token_ids.end());
  }
  const int tag_tokens = static_cast<int>(batch.token_ids.size()) - batch.tag_begin;
  if (tag_tokens > config.max_tags) {
    throw Error(ErrorKind::OverLength,
                std::to_string(tag_tokens) + " tag tokens exceed max_tags " +
                    std::to_string(config.max_tags));
  }
  batch.token_ids.push_back(vocab.sep_id());
  batch.tag_end = static_cast<int>(batch.token_ids.size());

  const int s_text = batch.text_len();
  batch.segment_ids.assign(batch.caption_end, 0);
  batch.segment_ids.insert(batch.segment_ids.end(), batch.tag_end - batch.tag_begin, 1);
  batch.position_ids.resize(s_text);
  for (int i = 0; i < batch.caption_end; ++i) batch.position_ids[i] = i;
  const int base = config.tag_position_base();
  for (int i = batch.tag_begin; i < batch.tag_end; ++i) {
    batch.position_ids[i] = base + (i - batch.tag_begin);
  }
}

}  // namespace

EncodedBatch build_finetune_batch(const std::vector<int>& caption_ids,
                                  const std::vector<TagBlock>& blocks,
                                  const std::vector<Region>& regions,
                                  uint64_t rng_seed, const BatchConfig& config,
                                  const Vocabulary& vocab) {
  if (caption_ids.empty()) {
    throw Error(ErrorKind::EmptyCaption, "caption has no tokens");
  }
  const int n = static_cast<int>(caption_ids.size());
  if (n > config.max_caption) {
    throw Error(ErrorKind::OverLength,
                std::to_string(n) + " caption tokens exceed max_caption " +
                    std::to_string(config.max_caption));
  }
  validate_regions(regions, config);

  std::vector<int> caption_span;
  caption_span.reserve(n + 2);
  caption_span.push_back(vocab.cls_id());
  caption_span.insert(caption_span.end(), caption_ids.begin(), caption_ids.end());
  caption_span.push_back(vocab.sep_id());

  EncodedBatch batch;
  batch.mode = BatchMode::Finetune;
  layout_finetune_text(batch, caption_span, blocks, config, vocab);
  batch.segment_ids.insert(batch.segment_ids.end(), regions.size(), 2);
  batch.regions = pack_regions(regions, config.d_app);
  batch.attn_mask = finetune_attention(batch.caption_end,
                                       batch.tag_end - batch.tag_begin,
                                       batch.n_regions());

  // Mask pool: caption word tokens at positions 1..n ([CLS] and [SEP] are
  // never counted against the budget); the terminal [SEP] joins the pool
  // only when mask_caption_eos is set.
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = 1 + i;
  if (config.mask_caption_eos) pool.push_back(n + 1);
  const int budget = std::max(
      1, static_cast<int>(std::ceil(config.mask_rate * static_cast<double>(n))));

  Rng rng(rng_seed);
  auto chosen = rng.sample_without_replacement(pool.size(), budget);
  std::sort(chosen.begin(), chosen.end());
  for (size_t idx : chosen) {
    apply_mask(batch.token_ids, pool[idx], kNoBlock, rng, config, vocab,
               batch.mask_slots);
  }
  return batch;
}

EncodedBatch build_infer_batch(const std::vector<int>& prefix_ids,
                               const std::vector<TagBlock>& blocks,
                               const std::vector<Region>& regions,
                               const BatchConfig& config,
                               const Vocabulary& vocab) {
  if (prefix_ids.size() < 2 || prefix_ids.front() != vocab.cls_id() ||
      prefix_ids.back() != vocab.mask_id()) {
    throw Error(ErrorKind::MalformedPrefix,
                "decode prefix must start with [CLS] and end with [MASK]");
  }
  if (static_cast<int>(prefix_ids.size()) > config.max_caption + 2) {
    throw Error(ErrorKind::OverLength, "decode prefix exceeds the caption span");
  }
  validate_regions(regions, config);

  EncodedBatch batch;
  batch.mode = BatchMode::Infer;
  layout_finetune_text(batch, prefix_ids, blocks, config, vocab);
  batch.segment_ids.insert(batch.segment_ids.end(), regions.size(), 2);
  batch.regions = pack_regions(regions, config.d_app);
  batch.attn_mask = finetune_attention(batch.caption_end,
                                       batch.tag_end - batch.tag_begin,
                                       batch.n_regions());

  MaskSlot slot;
  slot.position = batch.caption_end - 1;
  slot.action = MaskAction::Mask;
  slot.target_id = vocab.mask_id();  // unknown at decode time
  slot.block = kNoBlock;
  batch.mask_slots.push_back(slot);
  return batch;
}

}  // namespace vivo
