#pragma once
#include <cstdint>
#include <istream>
#include <string>
#include <vector>

namespace reppad {

struct Interaction {
  std::string user, item;
  int64_t ts = 0;
  bool operator==(const Interaction&) const = default;
};

struct LoadOptions {
  int user_col = 0, item_col = 1, time_col = 2;
  char comment = '#';
  double malformed_threshold = 0.01;  // fraction of data lines allowed to be malformed
};

struct LoadResult {
  std::vector<Interaction> records;      // file order
  std::vector<size_t> malformed_lines;   // 1-based line numbers
  size_t data_lines = 0;                 // non-comment, non-blank lines seen
};

LoadResult parse_interactions(std::istream& in, const LoadOptions& opts = {});
LoadResult load_interactions(const std::string& path, const LoadOptions& opts = {});

// Iterative k-core: drop records of users/items with fewer than k remaining records
// until a fixed point; file order of survivors is preserved.
std::vector<Interaction> k_core_filter(std::vector<Interaction> records, int k);

struct Corpus {
  // sequences[u] = item indices (1-based; 0 is the pad/delimiter token), time-sorted.
  std::vector<std::vector<int32_t>> sequences;
  std::vector<std::string> user_ids;  // user index -> raw id (lexicographic)
  std::vector<std::string> item_ids;  // item index - 1 -> raw id (lexicographic)

  int64_t num_users() const { return static_cast<int64_t>(sequences.size()); }
  int64_t num_items() const { return static_cast<int64_t>(item_ids.size()); }
  int64_t num_interactions() const;
};

Corpus build_corpus(const std::vector<Interaction>& records);

std::string corpus_summary_json(const Corpus& c);

struct SplitSeq {
  std::vector<int32_t> train;
  int32_t valid = 0, test = 0;
};

// Last item -> test target, penultimate -> validation target, rest -> training.
SplitSeq split_sequence(const std::vector<int32_t>& seq, const std::string& user_label);
std::vector<SplitSeq> leave_one_out_split(const Corpus& c);

}  // namespace reppad
