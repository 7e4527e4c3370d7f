#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace sttk {

// Reserved ids shared by every vocabulary.
inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kBosId = 2;
inline constexpr int kEosId = 3;
inline constexpr int kBlankId = 4;
inline constexpr int kNumSpecials = 5;

inline constexpr std::string_view kWordEnd = "</w>";
inline constexpr std::string_view kUnkSurface = "<unk>";

class Vocabulary {
 public:
  // Specials only.
  Vocabulary();

  // Appends a token and returns its id; returns the existing id if present.
  int add(const std::string& token);
  // kUnkId when absent.
  int id_of(const std::string& token) const;
  bool contains(const std::string& token) const;
  const std::string& token_of(int id) const;
  size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

  // One token per line; line number is the id.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// Byte-pair merge table plus the shared vocabulary.
struct SubwordModel {
  std::vector<std::pair<std::string, std::string>> merges;
  Vocabulary vocab;

  void save(const std::filesystem::path& vocab_path,
            const std::filesystem::path& merges_path) const;
  static SubwordModel load(const std::filesystem::path& vocab_path,
                           const std::filesystem::path& merges_path);
};

// Initial symbols of a word: its characters, the last one carrying "</w>".
std::vector<std::string> word_symbols(std::string_view word);
std::vector<std::string> split_words(std::string_view text);

// Greedy pair merging: the most frequent adjacent pair (ties broken by the
// lexicographically smallest pair) is merged until the vocabulary holds
// `vocab_size` entries or no pair occurs at least twice.
SubwordModel train_subwords(const std::vector<std::string>& corpus, size_t vocab_size);

// Never emits pad/bos/eos/blank.
std::vector<int> encode(const SubwordModel& model, std::string_view text);
// Specials other than unk are dropped; unk renders as "<unk>".
std::string decode(const SubwordModel& model, std::span<const int> ids);

// Lower-case, drop Unicode punctuation, collapse whitespace runs, trim.
std::string normalize_for_ctc(std::string_view text);

}  // namespace sttk
