#include "vivo/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace vivo {

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens,
                                   bool allow_unknown) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (int i = 0; i < static_cast<int>(v.tokens_.size()); ++i) {
    const auto& tok = v.tokens_[i];
    if (tok.empty()) {
      throw Error(ErrorKind::DataError,
                  "empty token at vocab line " + std::to_string(i));
    }
    if (!v.ids_.emplace(tok, i).second) {
      throw Error(ErrorKind::DataError, "duplicate vocab token '" + tok + "'");
    }
  }
  auto require = [&](const char* name) {
    auto it = v.ids_.find(name);
    if (it == v.ids_.end()) {
      throw Error(ErrorKind::DataError,
                  std::string("vocabulary is missing special token ") + name);
    }
    return it->second;
  };
  v.pad_ = require(kPad);
  v.cls_ = require(kCls);
  v.sep_ = require(kSep);
  v.mask_ = require(kMask);
  if (allow_unknown) {
    v.unk_ = require(kUnk);
  }
  return v;
}

Vocabulary Vocabulary::load(const std::string& path, bool allow_unknown) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::IoError, "cannot open vocab file " + path);
  }
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return from_tokens(std::move(tokens), allow_unknown);
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorKind::IoError, "cannot write vocab file " + path);
  }
  for (const auto& tok : tokens_) out << tok << '\n';
}

std::optional<int> Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw Error(ErrorKind::DataError, "token id out of range: " + std::to_string(id));
  }
  return tokens_[id];
}

bool Vocabulary::is_special(int id) const {
  return id == pad_ || id == cls_ || id == sep_ || id == mask_ ||
         (unk_ && id == *unk_);
}

std::string normalize(const std::string& text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!out.empty()) pending_space = true;
    } else {
      if (pending_space) {
        out.push_back(' ');
        pending_space = false;
      }
      out.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  return out;
}

namespace {

// Greedy longest-match over one whitespace-free word. Continuation pieces
// carry the "##" prefix. On failure: whole word -> [UNK] if configured,
// otherwise UnknownCharacter naming the offending position.
void tokenize_word(const std::string& word, const Vocabulary& vocab,
                   std::vector<int>& out) {
  const size_t checkpoint = out.size();
  size_t pos = 0;
  while (pos < word.size()) {
    const bool continuation = pos > 0;
    size_t len = word.size() - pos;
    int match = -1;
    for (; len >= 1; --len) {
      std::string piece = continuation ? "##" + word.substr(pos, len)
                                       : word.substr(pos, len);
      if (auto id = vocab.id(piece)) {
        match = *id;
        break;
      }
    }
    if (match < 0) {
      if (auto unk = vocab.unk_id()) {
        out.resize(checkpoint);
        out.push_back(*unk);
        return;
      }
      throw Error(ErrorKind::UnknownCharacter,
                  "cannot segment '" + word + "' at offset " +
                      std::to_string(pos) + " and no [UNK] is configured");
    }
    out.push_back(match);
    pos += len;
  }
}

}  // namespace

std::vector<int> tokenize(const std::string& text, const Vocabulary& vocab) {
  std::vector<int> out;
  std::istringstream words(normalize(text));
  std::string word;
  while (words >> word) {
    tokenize_word(word, vocab, out);
  }
  return out;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (tok.rfind("##", 0) == 0) {
      out += tok.substr(2);
    } else {
      if (!out.empty()) out.push_back(' ');
      out += tok;
    }
  }
  return out;
}

std::vector<TagBlock> build_tag_blocks(const std::vector<std::string>& tags,
                                       const Vocabulary& vocab) {
  std::vector<TagBlock> blocks;
  blocks.reserve(tags.size());
  for (const auto& tag : tags) {
    TagBlock block;
    block.tag_text = normalize(tag);
    if (block.tag_text.empty()) {
      throw Error(ErrorKind::DataError, "empty tag string");
    }
    block.token_ids = tokenize(block.tag_text, vocab);
    blocks.push_back(std::move(block));
  }
  return blocks;
}

}  // namespace vivo
