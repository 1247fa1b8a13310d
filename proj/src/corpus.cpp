#include "reppad/corpus.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace reppad {

namespace {

std::vector<std::string> split_ws(const std::string& line) {
  std::vector<std::string> out;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

bool parse_i64(const std::string& s, int64_t& out) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && p == s.data() + s.size();
}

}  // namespace

LoadResult parse_interactions(std::istream& in, const LoadOptions& opts) {
  LoadResult res;
  int need = std::max({opts.user_col, opts.item_col, opts.time_col}) + 1;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    size_t first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    if (line[first] == opts.comment) continue;
    ++res.data_lines;
    auto cols = split_ws(line);
    int64_t ts;
    if (static_cast<int>(cols.size()) < need || cols[opts.user_col].empty() ||
        cols[opts.item_col].empty() || !parse_i64(cols[opts.time_col], ts)) {
      res.malformed_lines.push_back(lineno);
      continue;
    }
    res.records.push_back({cols[opts.user_col], cols[opts.item_col], ts});
  }
  if (!res.malformed_lines.empty() &&
      static_cast<double>(res.malformed_lines.size()) >
          opts.malformed_threshold * static_cast<double>(res.data_lines)) {
    std::ostringstream os;
    os << "interaction log: " << res.malformed_lines.size() << " of " << res.data_lines
       << " lines malformed (threshold " << opts.malformed_threshold
       << "); first bad lines:";
    for (size_t i = 0; i < res.malformed_lines.size() && i < 10; ++i)
      os << " " << res.malformed_lines[i];
    throw std::runtime_error(os.str());
  }
  return res;
}

LoadResult load_interactions(const std::string& path, const LoadOptions& opts) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open interaction log: " + path);
  return parse_interactions(f, opts);
}

std::vector<Interaction> k_core_filter(std::vector<Interaction> records, int k) {
  if (k < 1) throw std::invalid_argument("k_core_filter: k must be >= 1");
  bool changed = true;
  while (changed) {
    std::map<std::string, int> ucount, icount;
    for (const auto& r : records) {
      ++ucount[r.user];
      ++icount[r.item];
    }
    std::vector<Interaction> kept;
    kept.reserve(records.size());
    for (auto& r : records)
      if (ucount[r.user] >= k && icount[r.item] >= k) kept.push_back(std::move(r));
    changed = kept.size() != records.size();
    records = std::move(kept);
  }
  return records;
}

int64_t Corpus::num_interactions() const {
  int64_t n = 0;
  for (const auto& s : sequences) n += static_cast<int64_t>(s.size());
  return n;
}

Corpus build_corpus(const std::vector<Interaction>& records) {
  Corpus c;
  std::map<std::string, int32_t> item_idx;  // ordered -> lexicographic vocab
  std::map<std::string, int32_t> user_idx;
  for (const auto& r : records) {
    item_idx.emplace(r.item, 0);
    user_idx.emplace(r.user, 0);
  }
  int32_t next = 1;  // 0 reserved for pad/delimiter
  for (auto& [raw, idx] : item_idx) {
    idx = next++;
    c.item_ids.push_back(raw);
  }
  next = 0;
  for (auto& [raw, idx] : user_idx) {
    idx = next++;
    c.user_ids.push_back(raw);
  }
  // (timestamp, file order) per user; stable sort keeps file order on ties
  std::vector<std::vector<std::pair<int64_t, int32_t>>> per_user(user_idx.size());
  for (const auto& r : records)
    per_user[user_idx[r.user]].push_back({r.ts, item_idx[r.item]});
  c.sequences.resize(per_user.size());
  for (size_t u = 0; u < per_user.size(); ++u) {
    auto& v = per_user[u];
    std::stable_sort(v.begin(), v.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    c.sequences[u].reserve(v.size());
    for (auto& [ts, it] : v) c.sequences[u].push_back(it);
  }
  return c;
}

std::string corpus_summary_json(const Corpus& c) {
  nlohmann::ordered_json j;
  j["num_users"] = c.num_users();
  j["num_items"] = c.num_items();
  j["num_actions"] = c.num_interactions();
  double users = static_cast<double>(std::max<int64_t>(1, c.num_users()));
  j["avg_length"] = static_cast<double>(c.num_interactions()) / users;
  double cells = static_cast<double>(c.num_users()) * static_cast<double>(c.num_items());
  j["sparsity"] = cells > 0 ? 1.0 - static_cast<double>(c.num_interactions()) / cells : 0.0;
  return j.dump(2);
}

SplitSeq split_sequence(const std::vector<int32_t>& seq, const std::string& user_label) {
  if (seq.size() < 3)
    throw std::runtime_error("leave_one_out_split: user '" + user_label +
                             "' has only " + std::to_string(seq.size()) +
                             " interactions (need >= 3)");
  SplitSeq out;
  out.train.assign(seq.begin(), seq.end() - 2);
  out.valid = seq[seq.size() - 2];
  out.test = seq.back();
  return out;
}

std::vector<SplitSeq> leave_one_out_split(const Corpus& c) {
  std::vector<SplitSeq> out(c.sequences.size());
  for (size_t u = 0; u < c.sequences.size(); ++u)
    out[u] = split_sequence(c.sequences[u], c.user_ids[u]);
  return out;
}

}  // namespace reppad
