#include "sttk/text.hpp"

#include <fstream>
#include <limits>
#include <map>

#include "sttk/errors.hpp"
#include "sttk/unicode.hpp"

namespace sttk {

namespace {

const std::vector<std::string> kSpecialTokens = {"<pad>", "<unk>", "<s>", "</s>", "<blank>"};

using Word = std::vector<std::string>;

// Merges every left-to-right occurrence of (left, right) inside `word`.
void apply_merge(Word& word, const std::string& left, const std::string& right) {
  if (word.size() < 2) return;
  Word out;
  out.reserve(word.size());
  size_t i = 0;
  while (i < word.size()) {
    if (i + 1 < word.size() && word[i] == left && word[i + 1] == right) {
      out.push_back(left + right);
      i += 2;
    } else {
      out.push_back(std::move(word[i]));
      ++i;
    }
  }
  word = std::move(out);
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const auto& t : kSpecialTokens) add(t);
}

int Vocabulary::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

bool Vocabulary::contains(const std::string& token) const { return ids_.count(token) != 0; }

const std::string& Vocabulary::token_of(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<size_t>(id)];
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write vocabulary " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open vocabulary " + path.string());
  Vocabulary v;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno < static_cast<size_t>(kNumSpecials)) {
      if (line != kSpecialTokens[lineno]) {
        throw FormatError(path.string() + ": line " + std::to_string(lineno + 1) +
                          " must be special token " + kSpecialTokens[lineno]);
      }
    } else {
      if (v.contains(line)) throw FormatError(path.string() + ": duplicate token '" + line + "'");
      v.add(line);
    }
    ++lineno;
  }
  if (v.size() < kNumSpecials + 1) throw FormatError(path.string() + ": vocabulary has no regular tokens");
  return v;
}

void SubwordModel::save(const std::filesystem::path& vocab_path,
                        const std::filesystem::path& merges_path) const {
  vocab.save(vocab_path);
  std::ofstream out(merges_path);
  if (!out) throw FormatError("cannot write merges " + merges_path.string());
  for (const auto& [l, r] : merges) out << l << ' ' << r << '\n';
}

SubwordModel SubwordModel::load(const std::filesystem::path& vocab_path,
                                const std::filesystem::path& merges_path) {
  SubwordModel m;
  m.vocab = Vocabulary::load(vocab_path);
  std::ifstream in(merges_path);
  if (!in) throw FormatError("cannot open merges " + merges_path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) {
      throw FormatError(merges_path.string() + ": malformed merge '" + line + "'");
    }
    m.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return m;
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::u32string current;
  for (char32_t cp : unicode::decode_utf8(text)) {
    if (unicode::is_space(cp)) {
      if (!current.empty()) words.push_back(unicode::encode_utf8(current));
      current.clear();
    } else {
      current.push_back(cp);
    }
  }
  if (!current.empty()) words.push_back(unicode::encode_utf8(current));
  return words;
}

std::vector<std::string> word_symbols(std::string_view word) {
  std::vector<std::string> symbols;
  for (char32_t cp : unicode::decode_utf8(word)) {
    std::string s;
    unicode::append_utf8(s, cp);
    symbols.push_back(std::move(s));
  }
  if (!symbols.empty()) symbols.back() += kWordEnd;
  return symbols;
}

SubwordModel train_subwords(const std::vector<std::string>& corpus, size_t vocab_size) {
  if (corpus.empty()) throw ConfigError("train_subwords: empty corpus");

  std::map<std::string, size_t> word_counts;
  for (const auto& sentence : corpus)
    for (auto& w : split_words(sentence)) ++word_counts[w];
  if (word_counts.empty()) throw ConfigError("train_subwords: corpus has no words");

  std::vector<std::pair<Word, size_t>> words;
  std::map<std::string, int> base;
  for (const auto& [w, n] : word_counts) {
    Word syms = word_symbols(w);
    for (const auto& s : syms) base.emplace(s, 0);
    words.emplace_back(std::move(syms), n);
  }

  SubwordModel model;
  if (vocab_size < base.size() + kNumSpecials) {
    throw ConfigError("train_subwords: vocab_size " + std::to_string(vocab_size) +
                      " below the " + std::to_string(base.size() + kNumSpecials) +
                      " entries needed for characters and specials");
  }
  for (const auto& [s, unused] : base) model.vocab.add(s);

  while (model.vocab.size() < vocab_size) {
    std::map<std::pair<std::string, std::string>, size_t> pair_counts;
    for (const auto& [syms, n] : words)
      for (size_t i = 0; i + 1 < syms.size(); ++i) pair_counts[{syms[i], syms[i + 1]}] += n;
    // std::map iterates pairs in lexicographic order, so the first maximum
    // wins ties.
    const std::pair<std::string, std::string>* best = nullptr;
    size_t best_count = 0;
    for (const auto& [p, n] : pair_counts) {
      if (n > best_count) {
        best = &p;
        best_count = n;
      }
    }
    if (!best || best_count < 2) break;
    const auto merge = *best;
    for (auto& [syms, n] : words) apply_merge(syms, merge.first, merge.second);
    model.merges.push_back(merge);
    model.vocab.add(merge.first + merge.second);
  }
  return model;
}

std::vector<int> encode(const SubwordModel& model, std::string_view text) {
  std::map<std::pair<std::string, std::string>, size_t> rank;
  for (size_t i = 0; i < model.merges.size(); ++i) rank.emplace(model.merges[i], i);

  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    Word syms = word_symbols(w);
    while (syms.size() > 1) {
      size_t best_rank = std::numeric_limits<size_t>::max();
      for (size_t i = 0; i + 1 < syms.size(); ++i) {
        auto it = rank.find({syms[i], syms[i + 1]});
        if (it != rank.end() && it->second < best_rank) best_rank = it->second;
      }
      if (best_rank == std::numeric_limits<size_t>::max()) break;
      const auto& [l, r] = model.merges[best_rank];
      apply_merge(syms, l, r);
    }
    for (const auto& s : syms) ids.push_back(model.vocab.id_of(s));
  }
  return ids;
}

std::string decode(const SubwordModel& model, std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id == kUnkId) {
      out += kUnkSurface;
      continue;
    }
    if (Vocabulary::is_special(id)) continue;
    const std::string& tok = model.vocab.token_of(id);
    if (tok.size() >= kWordEnd.size() &&
        tok.compare(tok.size() - kWordEnd.size(), kWordEnd.size(), kWordEnd) == 0) {
      out.append(tok, 0, tok.size() - kWordEnd.size());
      out.push_back(' ');
    } else {
      out += tok;
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

std::string normalize_for_ctc(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char32_t cp : unicode::decode_utf8(text)) {
    if (unicode::is_punctuation(cp)) continue;
    if (unicode::is_space(cp)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    unicode::append_utf8(out, unicode::to_lower(cp));
  }
  return out;
}

}  // namespace sttk
