#pragma once

#include "vivo/types.hpp"

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace vivo {

/// Immutable subword vocabulary. Ids are assigned by position: line number
/// in the vocab file (0-based) is the id, which keeps the mapping stable
/// across save/load and trivially diffable.
class Vocabulary {
 public:
  static constexpr const char* kPad = "[PAD]";
  static constexpr const char* kCls = "[CLS]";
  static constexpr const char* kSep = "[SEP]";
  static constexpr const char* kMask = "[MASK]";
  static constexpr const char* kUnk = "[UNK]";

  // Builds from an ordered token list. The four special tokens must be
  // present. If allow_unknown is set, "[UNK]" must also be present and
  // out-of-vocabulary words map to it instead of raising.
  static Vocabulary from_tokens(std::vector<std::string> tokens,
                                bool allow_unknown = false);

  // One token per line, LF-terminated, UTF-8, no duplicates.
  static Vocabulary load(const std::string& path, bool allow_unknown = false);
  void save(const std::string& path) const;

  int size() const { return static_cast<int>(tokens_.size()); }
  std::optional<int> id(const std::string& token) const;
  const std::string& token(int id) const;

  int pad_id() const { return pad_; }
  int cls_id() const { return cls_; }
  int sep_id() const { return sep_; }
  int mask_id() const { return mask_; }
  std::optional<int> unk_id() const { return unk_; }

  bool is_special(int id) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int pad_ = -1, cls_ = -1, sep_ = -1, mask_ = -1;
  std::optional<int> unk_;
};

/// One tag held as its tokenization. Within-block token order is fixed:
/// a multi-token tag may move as a unit during matching but its tokens
/// never reorder.
struct TagBlock {
  std::string tag_text;
  std::vector<int> token_ids;
};

// Lowercases and collapses runs of whitespace to single spaces.
std::string normalize(const std::string& text);

// Greedy longest-match-first WordPiece segmentation with "##" continuation
// pieces. Throws UnknownCharacter when a word cannot be segmented and the
// vocabulary has no unknown token configured.
std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab);

// Inverse of tokenize for in-vocabulary text: joins pieces, merging "##"
// continuations, space-separating word starts.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

std::vector<TagBlock> build_tag_blocks(const std::vector<std::string>& tags,
                                       const Vocabulary& vocab);

}  // namespace vivo
