// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "egmf/encoders.hpp"
#include "egmf/errors.hpp"

namespace egmf {

enum class Task { Classification, Regression };

inline std::string_view task_name(Task t) { return t == Task::Classification ? "classification" : "regression"; }

inline Task parse_task(std::string_view s) {
  if (s == "classification" || s == "ERC" || s == "erc") return Task::Classification;
  if (s == "regression" || s == "MSA" || s == "msa") return Task::Regression;
  throw ConfigError("unknown task: " + std::string(s));
}

inline constexpr std::size_t kLabelSlots = 16;
inline constexpr std::string_view kScoreChars = "-.0123456789";

// The seven MELD emotion categories, in the corpus' usual order.
inline const std::vector<std::string>& emotion_names() {
  static const std::vector<std::string> names{"anger", "disgust", "fear", "joy", "neutral", "sadness", "surprise"};
  return names;
}

// Token string <-> id map. Standard layout:
//   specials | 16 label slots | score characters | prompt words | w0, w1, ...
class Vocabulary {
 public:
  Vocabulary() = default;

  explicit Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], i).second) throw VocabularyError("duplicate token in vocabulary: " + tokens_[i]);
    }
    index_layout();
  }

  static Vocabulary standard(std::size_t vocab_size) {
    std::vector<std::string> t{"<pad>", "<bos>", "<eos>", "<unk>"};
    for (std::size_t i = 0; i < kLabelSlots; ++i) {
      t.push_back(i < emotion_names().size() ? emotion_names()[i] : "<label" + std::to_string(i) + ">");
    }
    for (char c : kScoreChars) t.emplace_back(1, c);
    for (const char* w : {"utterance", "features", "[", "]", ";", ":", "emotion", "sentiment", "score", "is", "the"}) {
      t.emplace_back(w);
    }
    if (vocab_size < t.size() + 8) {
      throw ConfigError("vocab_size " + std::to_string(vocab_size) + " too small; need at least " +
                        std::to_string(t.size() + 8));
    }
    for (std::size_t i = 0; t.size() < vocab_size; ++i) t.push_back("w" + std::to_string(i));
    return Vocabulary(std::move(t));
  }

  std::size_t size() const { return tokens_.size(); }

  TokenId id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) throw VocabularyError("token not in vocabulary: '" + std::string(token) + "'");
    return it->second;
  }

  bool contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

  const std::string& token(TokenId id) const {
    if (id >= tokens_.size()) {
      throw VocabularyError("token id " + std::to_string(id) + " outside vocabulary of size " + std::to_string(size()));
    }
    return tokens_[id];
  }

  TokenId pad() const { return 0; }
  TokenId bos() const { return 1; }
  TokenId eos() const { return 2; }

  // Reserved token of emotion label k.
  TokenId label_token(std::size_t k) const {
    if (k >= kLabelSlots) throw VocabularyError("label index " + std::to_string(k) + " beyond reserved label block");
    return label_base_ + k;
  }

  std::vector<TokenId> label_tokens(std::size_t n_classes) const {
    std::vector<TokenId> out;
    for (std::size_t k = 0; k < n_classes; ++k) out.push_back(label_token(k));
    return out;
  }

  TokenId score_char(char c) const {
    const auto pos = kScoreChars.find(c);
    if (pos == std::string_view::npos) throw VocabularyError(std::string("not a score character: ") + c);
    return score_base_ + pos;
  }

  std::vector<TokenId> score_tokens() const {
    std::vector<TokenId> out;
    for (std::size_t i = 0; i < kScoreChars.size(); ++i) out.push_back(score_base_ + i);
    return out;
  }

  // Ordinary words (w0, w1, ...), the pool synthetic text draws from.
  std::vector<TokenId> word_tokens() const {
    std::vector<TokenId> out;
    for (TokenId i = word_base_; i < tokens_.size(); ++i) out.push_back(i);
    return out;
  }

  std::vector<TokenId> encode(std::string_view text) const {
    std::vector<TokenId> ids;
    std::istringstream in{std::string(text)};
    std::string tok;
    while (in >> tok) ids.push_back(id(tok));
    return ids;
  }

  std::string decode(std::span<const TokenId> ids, std::string_view sep = " ") const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out += sep;
      out += token(ids[i]);
    }
    return out;
  }

  // One "id<TAB>token" line per entry.
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write vocabulary file " + path);
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary file " + path);
    std::vector<std::string> tokens;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const auto tab = line.find('\t');
      std::size_t id = 0;
      if (tab == std::string::npos ||
          std::from_chars(line.data(), line.data() + tab, id).ec != std::errc{} || id != tokens.size()) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": expected '<id>\\t<token>' with consecutive ids");
      }
      tokens.push_back(line.substr(tab + 1));
    }
    return Vocabulary(std::move(tokens));
  }

 private:
  void index_layout() {
    auto find = [&](const std::string& s) -> std::optional<std::size_t> {
      auto it = index_.find(s);
      return it == index_.end() ? std::nullopt : std::optional<std::size_t>(it->second);
    };
    for (const char* s : {"<pad>", "<bos>", "<eos>"}) {
      if (!find(s)) throw VocabularyError(std::string("vocabulary lacks special token ") + s);
    }
    if (*find("<pad>") != 0 || *find("<bos>") != 1 || *find("<eos>") != 2) {
      throw VocabularyError("special tokens must occupy ids 0..2");
    }
    label_base_ = *find(emotion_names().front());
    score_base_ = *find("-");
    for (std::size_t i = 0; i < kScoreChars.size(); ++i) {
      if (find(std::string(1, kScoreChars[i])) != score_base_ + i) throw VocabularyError("score characters must be contiguous");
    }
    auto w0 = find("w0");
    word_base_ = w0 ? *w0 : tokens_.size();
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
  TokenId label_base_ = 0;
  TokenId score_base_ = 0;
  TokenId word_base_ = 0;
};

// ---------------------------------------------------------------------------
// Score strings

// Nearest multiple of 0.1 with one decimal, e.g. "-1.4", "0.0", "2.5".
inline std::string render_score(double score) {
  long tenths = std::lround(score * 10.0);
  std::string out;
  if (tenths < 0) {
    out += '-';
    tenths = -tenths;
  }
  out += std::to_string(tenths / 10);
  out += '.';
  out += static_cast<char>('0' + tenths % 10);
  return out;
}

// Accepts -?D+(.D+)? and nothing else.
inline std::optional<double> parse_score(std::string_view s) {
  std::size_t i = 0;
  if (i < s.size() && s[i] == '-') ++i;
  const std::size_t int_begin = i;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i == int_begin) return std::nullopt;
  if (i < s.size()) {
    if (s[i] != '.') return std::nullopt;
    ++i;
    const std::size_t frac_begin = i;
    while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
    if (i == frac_begin || i != s.size()) return std::nullopt;
  }
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

inline std::vector<TokenId> score_to_tokens(const Vocabulary& vocab, double score) {
  std::vector<TokenId> ids;
  for (char c : render_score(score)) ids.push_back(vocab.score_char(c));
  return ids;
}

// ---------------------------------------------------------------------------
// Prompts

inline constexpr std::string_view kDefaultPromptTemplate =
    "# Wrapper around the pseudo tokens. {PSEUDO} and {TASK} are placeholders.\n"
    "template = <bos> utterance features [ {PSEUDO} ] ;\n"
    "task.classification = emotion :\n"
    "task.regression = sentiment score :\n";

// Parsed prompt template file: "key = value" lines, '#' comments. The
// template must contain {PSEUDO} followed by {TASK}; if {TASK} is absent it
// is appended at the end.
struct PromptTemplate {
  std::string prefix;
  std::string suffix;
  std::string classification_instruction;
  std::string regression_instruction;

  static PromptTemplate parse(std::string_view text) {
    PromptTemplate p;
    std::string wrapper;
    bool have_wrapper = false;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("prompt template line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key == "template") {
        wrapper = value;
        have_wrapper = true;
      } else if (key == "task.classification") {
        p.classification_instruction = value;
      } else if (key == "task.regression") {
        p.regression_instruction = value;
      } else {
        throw ParseError("prompt template line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      }
    }
    if (!have_wrapper) throw ParseError("prompt template has no 'template =' line");
    const auto pseudo = wrapper.find("{PSEUDO}");
    if (pseudo == std::string::npos) throw ParseError("prompt template lacks the {PSEUDO} placeholder");
    p.prefix = trim(wrapper.substr(0, pseudo));
    std::string rest = wrapper.substr(pseudo + 8);
    const auto task = rest.find("{TASK}");
    if (task != std::string::npos) {
      if (!trim(rest.substr(task + 6)).empty()) throw ParseError("{TASK} must be the last element of the template");
      rest = rest.substr(0, task);
    }
    p.suffix = trim(rest);
    return p;
  }

  static PromptTemplate standard() { return parse(kDefaultPromptTemplate); }

  static PromptTemplate load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open prompt template " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }
};

// Token ids of every fixed prompt segment for one task.
struct TaskPrompt {
  Task task = Task::Classification;
  std::vector<TokenId> prefix;
  std::vector<TokenId> suffix;
  std::vector<TokenId> instruction;
  std::vector<TokenId> label_tokens;  // classification: label k -> token
  double score_step = 0.1;            // regression grid
  double score_lo = -1.0;
  double score_hi = 1.0;

  static TaskPrompt build(const PromptTemplate& tpl, const Vocabulary& vocab, Task task, std::size_t n_classes,
                          double lo = -1.0, double hi = 1.0) {
    TaskPrompt p;
    p.task = task;
    p.prefix = vocab.encode(tpl.prefix);
    p.suffix = vocab.encode(tpl.suffix);
    p.instruction = vocab.encode(task == Task::Classification ? tpl.classification_instruction : tpl.regression_instruction);
    if (task == Task::Classification) p.label_tokens = vocab.label_tokens(n_classes);
    p.score_lo = lo;
    p.score_hi = hi;
    return p;
  }
};

}  // namespace egmf
