#include "reppad/augment.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace reppad {

AugmentOp augment_op_from_string(const std::string& s) {
  if (s == "random_items") return AugmentOp::random_items;
  if (s == "slide_window") return AugmentOp::slide_window;
  if (s == "random_seq_items") return AugmentOp::random_seq_items;
  if (s == "crop") return AugmentOp::crop;
  if (s == "mask") return AugmentOp::mask;
  if (s == "reorder") return AugmentOp::reorder;
  if (s == "substitute") return AugmentOp::substitute;
  if (s == "insert") return AugmentOp::insert;
  throw std::invalid_argument("unknown augment op '" + s + "'");
}

std::string to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::random_items: return "random_items";
    case AugmentOp::slide_window: return "slide_window";
    case AugmentOp::random_seq_items: return "random_seq_items";
    case AugmentOp::crop: return "crop";
    case AugmentOp::mask: return "mask";
    case AugmentOp::reorder: return "reorder";
    case AugmentOp::substitute: return "substitute";
    case AugmentOp::insert: return "insert";
  }
  return "?";
}

void AugmentSpec::validate() const {
  switch (op) {
    case AugmentOp::crop:
    case AugmentOp::mask:
    case AugmentOp::reorder:
    case AugmentOp::substitute:
    case AugmentOp::insert:
      if (!(ratio > 0.0 && ratio <= 1.0))
        throw std::invalid_argument("augment: ratio must be in (0, 1], got " +
                                    std::to_string(ratio));
      break;
    case AugmentOp::slide_window:
      if (window < 1) throw std::invalid_argument("augment: window must be >= 1");
      break;
    case AugmentOp::random_items:
    case AugmentOp::random_seq_items:
      if (count < 1) throw std::invalid_argument("augment: count must be >= 1");
      break;
  }
}

ItemSimilarity build_similarity(const std::vector<std::vector<int32_t>>& train_sequences,
                                int top_s) {
  if (train_sequences.empty())
    throw std::invalid_argument("build_similarity: empty training split");
  if (top_s < 1) throw std::invalid_argument("build_similarity: top_s must be >= 1");
  int32_t max_item = 0;
  for (const auto& seq : train_sequences)
    for (int32_t it : seq) max_item = std::max(max_item, it);

  std::vector<std::map<int32_t, int64_t>> counts(static_cast<size_t>(max_item) + 1);
  for (const auto& seq : train_sequences) {
    const int n = static_cast<int>(seq.size());
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j <= i + 2 && j < n; ++j) {
        const int32_t a = seq[static_cast<size_t>(i)], b = seq[static_cast<size_t>(j)];
        if (a == b || a == 0 || b == 0) continue;
        ++counts[static_cast<size_t>(a)][b];
        ++counts[static_cast<size_t>(b)][a];
      }
    }
  }

  ItemSimilarity sim;
  sim.top_s = top_s;
  sim.lists.resize(counts.size());
  for (size_t it = 1; it < counts.size(); ++it) {
    std::vector<std::pair<int32_t, int64_t>> ranked(counts[it].begin(), counts[it].end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
      if (x.second != y.second) return x.second > y.second;
      return x.first < y.first;
    });
    const size_t keep = std::min<size_t>(ranked.size(), static_cast<size_t>(top_s));
    sim.lists[it].reserve(keep);
    for (size_t r = 0; r < keep; ++r) sim.lists[it].push_back(ranked[r].first);
  }
  return sim;
}

namespace {

// First k entries of a partial Fisher-Yates over 0..n-1 (exactly k draws), sorted.
std::vector<int> sample_positions(int n, int k, Rng& rng) {
  std::vector<int> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    const int j = static_cast<int>(rng.randint(i, n - 1));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

std::vector<int32_t> apply_augment(const AugmentSpec& spec,
                                   const std::vector<int32_t>& seq, int32_t vocab_size,
                                   const ItemSimilarity* sim, Rng& rng) {
  spec.validate();
  if (seq.size() < 2)
    throw std::invalid_argument("apply_augment: sequence must have at least 2 items");
  if ((spec.op == AugmentOp::substitute || spec.op == AugmentOp::insert) && sim == nullptr)
    throw std::invalid_argument("apply_augment: " + to_string(spec.op) +
                                " requires item similarity");
  const int n = static_cast<int>(seq.size());
  switch (spec.op) {
    case AugmentOp::crop: {
      const int len = static_cast<int>(std::ceil(spec.ratio * n));
      const int start = static_cast<int>(rng.randint(0, n - len));
      return std::vector<int32_t>(seq.begin() + start, seq.begin() + start + len);
    }
    case AugmentOp::mask: {
      const int k = static_cast<int>(std::floor(spec.ratio * n));
      std::vector<int32_t> out = seq;
      for (int p : sample_positions(n, k, rng)) out[static_cast<size_t>(p)] = 0;
      return out;
    }
    case AugmentOp::reorder: {
      const int len = static_cast<int>(std::ceil(spec.ratio * n));
      const int start = static_cast<int>(rng.randint(0, n - len));
      std::vector<int32_t> out = seq;
      rng.shuffle(out.begin() + start, out.begin() + start + len);
      return out;
    }
    case AugmentOp::substitute: {
      const int k = static_cast<int>(std::floor(spec.ratio * n));
      std::vector<int32_t> out = seq;
      for (int p : sample_positions(n, k, rng)) {
        const int32_t repl = sim->top_of(out[static_cast<size_t>(p)]);
        if (repl != 0) out[static_cast<size_t>(p)] = repl;
      }
      return out;
    }
    case AugmentOp::insert: {
      const int k = static_cast<int>(std::floor(spec.ratio * n));
      const std::vector<int> chosen = sample_positions(n, k, rng);
      std::vector<int32_t> out;
      out.reserve(seq.size() + chosen.size());
      size_t next = 0;
      for (int p = 0; p < n; ++p) {
        out.push_back(seq[static_cast<size_t>(p)]);
        if (next < chosen.size() && chosen[next] == p) {
          ++next;
          const int32_t ins = sim->top_of(seq[static_cast<size_t>(p)]);
          if (ins != 0) out.push_back(ins);
        }
      }
      return out;
    }
    case AugmentOp::random_items: {
      if (vocab_size < 1)
        throw std::invalid_argument("apply_augment: random_items needs vocab_size >= 1");
      std::vector<int32_t> out = seq;
      for (int c = 0; c < spec.count; ++c)
        out.push_back(static_cast<int32_t>(rng.randint(1, vocab_size)));
      return out;
    }
    case AugmentOp::random_seq_items: {
      std::vector<int32_t> out = seq;
      for (int c = 0; c < spec.count; ++c)
        out.push_back(seq[static_cast<size_t>(rng.randint(0, n - 1))]);
      return out;
    }
    case AugmentOp::slide_window:
      throw std::invalid_argument(
          "apply_augment: slide_window expands via enumerate_windows");
  }
  throw std::logic_error("apply_augment: unreachable");
}

std::vector<int32_t> apply_cmr(bool with_si, double ratio, const std::vector<int32_t>& seq,
                               int32_t vocab_size, const ItemSimilarity* sim, Rng& rng) {
  static const AugmentOp kBase[] = {AugmentOp::crop, AugmentOp::mask, AugmentOp::reorder,
                                    AugmentOp::substitute, AugmentOp::insert};
  const int choices = with_si ? 5 : 3;
  AugmentSpec spec;
  spec.op = kBase[rng.randint(0, choices - 1)];
  spec.ratio = ratio;
  return apply_augment(spec, seq, vocab_size, sim, rng);
}

std::vector<std::vector<int32_t>> enumerate_windows(const std::vector<int32_t>& seq,
                                                    int window) {
  if (window < 1) throw std::invalid_argument("enumerate_windows: window must be >= 1");
  if (seq.empty()) throw std::invalid_argument("enumerate_windows: empty sequence");
  const int n = static_cast<int>(seq.size());
  if (window >= n) return {seq};
  std::vector<std::vector<int32_t>> out;
  out.reserve(static_cast<size_t>(n - window + 1));
  for (int s = 0; s + window <= n; ++s)
    out.emplace_back(seq.begin() + s, seq.begin() + s + window);
  return out;
}

}  // namespace reppad
