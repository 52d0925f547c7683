// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "egmf/encoders.hpp"
#include "egmf/errors.hpp"
#include "egmf/rng.hpp"
#include "egmf/tensor.hpp"
#include "egmf/vocab.hpp"

namespace egmf {

inline constexpr std::array<const char*, 3> kSplitNames{"train", "valid", "test"};

// Knobs for the synthetic corpus. Each modality carries the latent label
// with strength s_m on top of N(0, sigma^2) noise.
struct SyntheticSpec {
  std::string name = "synthetic";
  std::string language = "en";
  Task task = Task::Classification;
  std::size_t n_classes = 7;
  double score_lo = -1.0;
  double score_hi = 1.0;
  std::array<std::size_t, 3> n_samples{64, 64, 64};  // train, valid, test
  double s_t = 1.0;
  double s_a = 0.3;
  double s_v = 0.3;
  double sigma = 0.5;
  std::uint64_t seed = 0;
  std::size_t d_a = 16;
  std::size_t d_v = 16;
  std::size_t vocab_size = 512;
  std::size_t keywords_per_class = 8;
  std::size_t text_min = 4, text_max = 8;
  std::size_t frames_min = 3, frames_max = 6;
  std::size_t lm_corpus_lines = 512;

  void validate() const {
    for (double s : {s_t, s_a, s_v}) {
      if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("data signal strengths must lie in [0, 1]");
    }
    if (s_t == 0.0 && s_a == 0.0 && s_v == 0.0) throw ConfigError("data: at least one signal strength must be > 0");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("data.sigma must be finite and non-negative");
    if (n_classes < 2 || n_classes > kLabelSlots) {
      throw ConfigError("data.n_classes must be in [2, " + std::to_string(kLabelSlots) + "]");
    }
    if (task == Task::Regression && !((score_lo == -1.0 && score_hi == 1.0) || (score_lo == -3.0 && score_hi == 3.0))) {
      throw ConfigError("data score range must be [-1, 1] or [-3, 3]");
    }
    if (d_a == 0 || d_v == 0) throw ConfigError("data feature dims must be positive");
    if (text_min == 0 || text_min > text_max) throw ConfigError("data text length range is invalid");
    if (frames_min == 0 || frames_min > frames_max) throw ConfigError("data frame count range is invalid");
    if (keywords_per_class == 0) throw ConfigError("data.keywords_per_class must be positive");
  }
};

struct DatasetManifest {
  std::string name;
  std::string language;
  Task task = Task::Classification;
  std::size_t n_classes = 7;
  double score_lo = -1.0;
  double score_hi = 1.0;
  std::array<std::size_t, 3> split_sizes{};
  std::size_t d_a = 0;
  std::size_t d_v = 0;
  std::size_t vocab_size = 0;
  std::string vocab_file = "vocab.txt";
  std::string prompt_file = "prompt.txt";
  std::string lm_corpus_file = "lm_corpus.txt";
  std::uint64_t seed = 0;
  std::filesystem::path dir;  // directory holding the manifest; not serialized

  static std::size_t split_index(const std::string& split) {
    for (std::size_t i = 0; i < kSplitNames.size(); ++i) {
      if (split == kSplitNames[i]) return i;
    }
    throw ConfigError("unknown split '" + split + "' (expected train, valid or test)");
  }

  std::filesystem::path split_path(const std::string& split) const {
    split_index(split);
    return dir / (split + ".jsonl");
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["name"] = name;
    j["language"] = language;
    j["task"] = task == Task::Classification ? "ERC" : "MSA";
    if (task == Task::Classification) j["n_classes"] = n_classes;
    else j["score_range"] = {score_lo, score_hi};
    nlohmann::ordered_json splits;
    for (std::size_t i = 0; i < 3; ++i) splits[kSplitNames[i]] = split_sizes[i];
    j["splits"] = splits;
    j["d_a"] = d_a;
    j["d_v"] = d_v;
    j["vocab_size"] = vocab_size;
    j["vocab"] = vocab_file;
    j["prompt"] = prompt_file;
    j["lm_corpus"] = lm_corpus_file;
    j["seed"] = seed;
    return j;
  }

  static DatasetManifest from_json(const nlohmann::json& j) {
    DatasetManifest m;
    try {
      m.name = j.at("name").get<std::string>();
      m.language = j.value("language", std::string("en"));
      m.task = parse_task(j.at("task").get<std::string>());
      if (m.task == Task::Classification) {
        m.n_classes = j.at("n_classes").get<std::size_t>();
      } else {
        const auto& r = j.at("score_range");
        m.score_lo = r.at(0).get<double>();
        m.score_hi = r.at(1).get<double>();
        if (!((m.score_lo == -1.0 && m.score_hi == 1.0) || (m.score_lo == -3.0 && m.score_hi == 3.0))) {
          throw SchemaError("manifest score_range must be [-1, 1] or [-3, 3]");
        }
      }
      for (std::size_t i = 0; i < 3; ++i) m.split_sizes[i] = j.at("splits").at(kSplitNames[i]).get<std::size_t>();
      m.d_a = j.at("d_a").get<std::size_t>();
      m.d_v = j.at("d_v").get<std::size_t>();
      m.vocab_size = j.at("vocab_size").get<std::size_t>();
      m.vocab_file = j.value("vocab", m.vocab_file);
      m.prompt_file = j.value("prompt", m.prompt_file);
      m.lm_corpus_file = j.value("lm_corpus", m.lm_corpus_file);
      m.seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("manifest: ") + e.what());
    }
    return m;
  }

  static DatasetManifest load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m = from_json(j);
    m.dir = path.parent_path();
    return m;
  }

  Vocabulary vocabulary() const {
    Vocabulary v = Vocabulary::load((dir / vocab_file).string());
    if (v.size() != vocab_size) throw SchemaError("vocabulary file size disagrees with manifest vocab_size");
    return v;
  }

  PromptTemplate prompt_template() const { return PromptTemplate::load((dir / prompt_file).string()); }
};

// Keyword block for class c: keywords_per_class consecutive plain words.
inline std::vector<TokenId> class_keywords(const Vocabulary& vocab, std::size_t c, std::size_t per_class) {
  const std::vector<TokenId> words = vocab.word_tokens();
  if ((c + 1) * per_class > words.size()) throw ConfigError("vocabulary too small for the keyword blocks");
  return {words.begin() + static_cast<std::ptrdiff_t>(c * per_class),
          words.begin() + static_cast<std::ptrdiff_t>((c + 1) * per_class)};
}

namespace detail {

inline std::vector<double> unit_vector(Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  double n2 = 0.0;
  for (double& x : v) {
    x = rng.normal();
    n2 += x * x;
  }
  const double n = std::sqrt(n2);
  for (double& x : v) x /= n;
  return v;
}

// Class index with the largest evidence; ties broken uniformly.
inline std::size_t noisy_argmax(Rng& rng, std::size_t n, std::size_t c, double strength, double sigma) {
  std::vector<double> ev(n);
  for (std::size_t j = 0; j < n; ++j) ev[j] = (j == c ? strength : 0.0) + sigma * rng.normal();
  double best = ev[0];
  for (double e : ev) best = std::max(best, e);
  std::vector<std::size_t> ties;
  for (std::size_t j = 0; j < n; ++j) {
    if (ev[j] == best) ties.push_back(j);
  }
  return ties.size() == 1 ? ties[0] : ties[rng.below(ties.size())];
}

inline std::size_t score_bin(double score, double lo, double hi, std::size_t n_bins) {
  const double u = (score - lo) / (hi - lo);
  return std::min(n_bins - 1, static_cast<std::size_t>(std::floor(u * static_cast<double>(n_bins))));
}

}  // namespace detail

struct SyntheticPrototypes {
  std::vector<std::vector<double>> audio, visual;  // one unit vector per class
};

inline SyntheticPrototypes make_prototypes(const SyntheticSpec& spec) {
  Rng rng = Rng(spec.seed).fork(0x70726f74);
  SyntheticPrototypes p;
  for (std::size_t c = 0; c < spec.n_classes; ++c) p.audio.push_back(detail::unit_vector(rng, spec.d_a));
  for (std::size_t c = 0; c < spec.n_classes; ++c) p.visual.push_back(detail::unit_vector(rng, spec.d_v));
  return p;
}

// One split drawn from its own RNG stream.
inline std::vector<UtteranceFeatures> generate_split(const SyntheticSpec& spec, const Vocabulary& vocab,
                                                     const SyntheticPrototypes& protos, std::size_t split) {
  Rng rng = Rng(spec.seed).fork(0x73706c00 + split);
  std::vector<std::vector<TokenId>> blocks;
  for (std::size_t c = 0; c < spec.n_classes; ++c) blocks.push_back(class_keywords(vocab, c, spec.keywords_per_class));

  auto frames = [&](const std::vector<double>& proto, double strength, std::size_t d) {
    const std::size_t rows = spec.frames_min + rng.below(spec.frames_max - spec.frames_min + 1);
    Tensor t({rows, d});
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < d; ++k) t.at(r, k) = strength * proto[k] + spec.sigma * rng.normal();
    }
    return t;
  };

  std::vector<UtteranceFeatures> out;
  out.reserve(spec.n_samples[split]);
  for (std::size_t i = 0; i < spec.n_samples[split]; ++i) {
    UtteranceFeatures u;
    std::size_t cls = 0;
    double direction = 1.0;  // regression: signed intensity applied to the class-0 prototype
    if (spec.task == Task::Classification) {
      cls = rng.below(spec.n_classes);
      u.target = cls;
    } else {
      const double raw = spec.score_lo + (spec.score_hi - spec.score_lo) * rng.uniform();
      const double score = std::lround(raw * 10.0) / 10.0;
      cls = detail::score_bin(score, spec.score_lo, spec.score_hi, spec.n_classes);
      direction = score / spec.score_hi;
      u.target = score;
    }
    const std::size_t len = spec.text_min + rng.below(spec.text_max - spec.text_min + 1);
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t k = detail::noisy_argmax(rng, spec.n_classes, cls, spec.s_t, spec.sigma);
      u.text.push_back(blocks[k][rng.below(blocks[k].size())]);
    }
    if (spec.task == Task::Classification) {
      u.audio = frames(protos.audio[cls], spec.s_a, spec.d_a);
      u.visual = frames(protos.visual[cls], spec.s_v, spec.d_v);
    } else {
      u.audio = frames(protos.audio[0], spec.s_a * direction, spec.d_a);
      u.visual = frames(protos.visual[0], spec.s_v * direction, spec.d_v);
    }
    out.push_back(std::move(u));
  }
  return out;
}

inline nlohmann::ordered_json record_to_json(const UtteranceFeatures& u) {
  auto rows = [](const Tensor& t) {
    nlohmann::ordered_json a = nlohmann::ordered_json::array();
    for (std::size_t r = 0; r < t.rows(); ++r) {
      auto s = t.row_span(r);
      a.push_back(std::vector<double>(s.begin(), s.end()));
    }
    return a;
  };
  nlohmann::ordered_json j;
  j["text"] = u.text;
  j["audio"] = rows(u.audio);
  j["visual"] = rows(u.visual);
  if (u.has_label()) j["target"] = u.label();
  else j["target"] = u.score();
  return j;
}

// LM pretraining lines: the prompt wrapper around class keywords followed by
// the answer, so the frozen LM already maps keyword evidence to answers.
inline std::vector<std::vector<TokenId>> generate_lm_corpus(const SyntheticSpec& spec, const Vocabulary& vocab,
                                                            const PromptTemplate& tpl) {
  Rng rng = Rng(spec.seed).fork(0x6c6d6370);
  const std::vector<TokenId> prefix = vocab.encode(tpl.prefix), suffix = vocab.encode(tpl.suffix);
  const std::vector<TokenId> instr =
      vocab.encode(spec.task == Task::Classification ? tpl.classification_instruction : tpl.regression_instruction);
  std::vector<std::vector<TokenId>> lines;
  for (std::size_t i = 0; i < spec.lm_corpus_lines; ++i) {
    std::vector<TokenId> line = prefix;
    std::size_t cls = 0;
    double score = 0.0;
    if (spec.task == Task::Classification) {
      cls = rng.below(spec.n_classes);
    } else {
      score = std::lround((spec.score_lo + (spec.score_hi - spec.score_lo) * rng.uniform()) * 10.0) / 10.0;
      cls = detail::score_bin(score, spec.score_lo, spec.score_hi, spec.n_classes);
    }
    const std::vector<TokenId> block = class_keywords(vocab, cls, spec.keywords_per_class);
    const std::size_t len = 1 + rng.below(spec.text_max);
    for (std::size_t j = 0; j < len; ++j) line.push_back(block[rng.below(block.size())]);
    line.insert(line.end(), suffix.begin(), suffix.end());
    line.insert(line.end(), instr.begin(), instr.end());
    if (spec.task == Task::Classification) {
      line.push_back(vocab.label_token(cls));
    } else {
      for (TokenId t : score_to_tokens(vocab, score)) line.push_back(t);
    }
    line.push_back(vocab.eos());
    lines.push_back(std::move(line));
  }
  return lines;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << content;
  if (!out) throw DataError("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Writes manifest.json, the three JSONL splits, vocab.txt, prompt.txt and
// lm_corpus.txt into dir. Returns the manifest.
inline DatasetManifest generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& dir,
                                          std::string_view prompt_text = kDefaultPromptTemplate) {
  spec.validate();
  std::filesystem::create_directories(dir);
  const Vocabulary vocab = Vocabulary::standard(spec.vocab_size);
  const PromptTemplate tpl = PromptTemplate::parse(prompt_text);
  const SyntheticPrototypes protos = make_prototypes(spec);

  DatasetManifest m;
  m.name = spec.name;
  m.language = spec.language;
  m.task = spec.task;
  m.n_classes = spec.n_classes;
  m.score_lo = spec.score_lo;
  m.score_hi = spec.score_hi;
  m.split_sizes = spec.n_samples;
  m.d_a = spec.d_a;
  m.d_v = spec.d_v;
  m.vocab_size = spec.vocab_size;
  m.seed = spec.seed;
  m.dir = dir;

  for (std::size_t s = 0; s < 3; ++s) {
    std::string body;
    for (const auto& u : generate_split(spec, vocab, protos, s)) body += record_to_json(u).dump() + '\n';
    write_text_file(m.split_path(kSplitNames[s]), body);
  }
  vocab.save((dir / m.vocab_file).string());
  write_text_file(dir / m.prompt_file, std::string(prompt_text));
  std::string corpus;
  for (const auto& line : generate_lm_corpus(spec, vocab, tpl)) corpus += vocab.decode(line) + '\n';
  write_text_file(dir / m.lm_corpus_file, corpus);
  write_text_file(dir / "manifest.json", m.to_json().dump(2) + '\n');
  return m;
}

namespace detail {

// nlohmann rejects NaN/Infinity literals; map them to null so the schema
// check can name the offending field instead of failing as a parse error.
inline std::string nonfinite_to_null(const std::string& line) {
  std::string out;
  out.reserve(line.size());
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (!in_string) {
      bool matched = false;
      for (std::string_view lit : {"-Infinity", "Infinity", "-inf", "inf", "NaN", "nan"}) {
        if (line.compare(i, lit.size(), lit) == 0) {
          out += "null";
          i += lit.size() - 1;
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    out += c;
  }
  return out;
}

inline Tensor parse_frames(const nlohmann::json& j, const char* field, std::size_t width, std::size_t lineno) {
  const std::string where = "line " + std::to_string(lineno) + ": field '" + field + "'";
  if (!j.is_array() || j.empty()) throw SchemaError(where + " must be a non-empty array of rows");
  Tensor t({j.size(), width});
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto& row = j[r];
    if (!row.is_array() || row.size() != width) {
      throw SchemaError(where + " row " + std::to_string(r) + " has width " +
                        std::to_string(row.is_array() ? row.size() : 0) + ", expected " + std::to_string(width));
    }
    for (std::size_t k = 0; k < width; ++k) {
      if (!row[k].is_number() || !std::isfinite(row[k].get<double>())) {
        throw SchemaError(where + " value [" + std::to_string(r) + "][" + std::to_string(k) + "] is not a finite number");
      }
      t.at(r, k) = row[k].get<double>();
    }
  }
  return t;
}

}  // namespace detail

// Parses and validates one JSONL record against the manifest.
inline UtteranceFeatures parse_record(const std::string& raw, const DatasetManifest& m, std::size_t lineno) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(detail::nonfinite_to_null(raw));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("line " + std::to_string(lineno) + ": malformed JSON: " + e.what());
  }
  const std::string at = "line " + std::to_string(lineno) + ": ";
  if (!j.is_object()) throw SchemaError(at + "record must be a JSON object");
  for (const char* k : {"text", "audio", "visual", "target"}) {
    if (!j.contains(k)) throw SchemaError(at + "missing field '" + k + "'");
  }
  UtteranceFeatures u;
  const auto& text = j["text"];
  if (!text.is_array() || text.empty()) throw SchemaError(at + "field 'text' must be a non-empty array of token ids");
  for (const auto& id : text) {
    if (!id.is_number_unsigned() || id.get<std::size_t>() >= m.vocab_size) {
      throw SchemaError(at + "field 'text' holds an id outside [0, " + std::to_string(m.vocab_size) + ")");
    }
    u.text.push_back(id.get<std::size_t>());
  }
  u.audio = detail::parse_frames(j["audio"], "audio", m.d_a, lineno);
  u.visual = detail::parse_frames(j["visual"], "visual", m.d_v, lineno);
  const auto& target = j["target"];
  if (m.task == Task::Classification) {
    if (!target.is_number_unsigned() || target.get<std::size_t>() >= m.n_classes) {
      throw SchemaError(at + "field 'target' must be a label in [0, " + std::to_string(m.n_classes) + ")");
    }
    u.target = target.get<std::size_t>();
  } else {
    if (!target.is_number() || !std::isfinite(target.get<double>())) {
      throw SchemaError(at + "field 'target' is not a finite number");
    }
    const double s = target.get<double>();
    if (s < m.score_lo || s > m.score_hi) throw SchemaError(at + "field 'target' lies outside the manifest score range");
    u.target = s;
  }
  return u;
}

// Reads one split. Blank lines are skipped; the record count must match
// the manifest.
inline std::vector<UtteranceFeatures> load_split(const DatasetManifest& m, const std::string& split) {
  const auto path = m.split_path(split);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open split file " + path.string());
  std::vector<UtteranceFeatures> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_record(line, m, lineno));
  }
  const std::size_t expected = m.split_sizes[DatasetManifest::split_index(split)];
  if (out.size() != expected) {
    throw SchemaError(path.string() + " holds " + std::to_string(out.size()) + " records but the manifest lists " +
                      std::to_string(expected));
  }
  return out;
}

inline std::vector<std::vector<TokenId>> load_lm_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::istringstream in(read_text_file(path));
  std::vector<std::vector<TokenId>> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    lines.push_back(vocab.encode(line));
  }
  return lines;
}

}  // namespace egmf
