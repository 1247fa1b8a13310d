#include "reppad/padding.hpp"

#include <algorithm>
#include <stdexcept>

namespace reppad {

PadMode pad_mode_from_string(const std::string& s) {
  if (s == "zero") return PadMode::zero;
  if (s == "reppad") return PadMode::reppad;
  if (s == "reppad_plus") return PadMode::reppad_plus;
  throw std::invalid_argument("unknown pad mode '" + s +
                              "' (expected zero|reppad|reppad_plus)");
}

MRule m_rule_from_string(const std::string& s) {
  if (s == "fix") return MRule::fix;
  if (s == "max") return MRule::max;
  if (s == "rand_incl_zero") return MRule::rand_incl_zero;
  if (s == "rand_from_one") return MRule::rand_from_one;
  throw std::invalid_argument("unknown m rule '" + s +
                              "' (expected fix|max|rand_incl_zero|rand_from_one)");
}

std::string to_string(PadMode m) {
  switch (m) {
    case PadMode::zero: return "zero";
    case PadMode::reppad: return "reppad";
    case PadMode::reppad_plus: return "reppad_plus";
  }
  return "?";
}

std::string to_string(MRule r) {
  switch (r) {
    case MRule::fix: return "fix";
    case MRule::max: return "max";
    case MRule::rand_incl_zero: return "rand_incl_zero";
    case MRule::rand_from_one: return "rand_from_one";
  }
  return "?";
}

std::vector<int32_t> seq_prepare(const std::vector<int32_t>& seq, int n) {
  if (n < 1) throw std::invalid_argument("seq_prepare: n must be >= 1");
  const int64_t len = static_cast<int64_t>(seq.size());
  std::vector<int32_t> out(static_cast<size_t>(n));
  if (len >= n) {
    std::copy(seq.end() - n, seq.end(), out.begin());
  } else {
    const int64_t pad = n - len;
    std::fill(out.begin(), out.begin() + pad, 0);
    std::copy(seq.begin(), seq.end(), out.begin() + pad);
  }
  return out;
}

int max_pad_count(int train_len, int n) {
  if (train_len < 1) throw std::invalid_argument("max_pad_count: train_len must be >= 1");
  if (n < 1) throw std::invalid_argument("max_pad_count: n must be >= 1");
  return n / train_len;
}

int resolve_m(MRule rule, int fix_k, int max_count, Rng& rng) {
  if (max_count < 1) throw std::invalid_argument("resolve_m: max_count must be >= 1");
  switch (rule) {
    case MRule::fix:
      if (fix_k < 0) throw std::invalid_argument("resolve_m: fix_k must be >= 0");
      return std::min(fix_k, max_count);
    case MRule::max: return max_count;
    case MRule::rand_incl_zero: return rng.randint(0, max_count);
    case MRule::rand_from_one: return rng.randint(1, max_count);
  }
  throw std::logic_error("resolve_m: unreachable");
}

std::vector<int32_t> subseq_window(const std::vector<int32_t>& seq, int start, int len) {
  if (len < 0 || start < 0 ||
      static_cast<size_t>(start) + static_cast<size_t>(len) > seq.size())
    throw std::invalid_argument("subseq_window: window out of range");
  return std::vector<int32_t>(seq.begin() + start, seq.begin() + start + len);
}

std::vector<int32_t> random_subseq(const std::vector<int32_t>& seq, int len, Rng& rng) {
  if (len < 1 || static_cast<size_t>(len) > seq.size())
    throw std::invalid_argument("random_subseq: len must be in [1, seq length]");
  const int start = rng.randint(0, static_cast<int>(seq.size()) - len);
  return subseq_window(seq, start, len);
}

namespace {

void check_pair(const std::vector<int32_t>& input, const std::vector<int32_t>& target) {
  if (input.empty()) throw std::invalid_argument("padding: input must be non-empty");
  if (input.size() != target.size())
    throw std::invalid_argument("padding: input and target lengths differ");
}

RawPadded unchanged_raw(const std::vector<int32_t>& input,
                        const std::vector<int32_t>& target) {
  return RawPadded{input, target, {0}, 0};
}

// pad_num copies of (seq [+ delimiter slot]) prepended before the original.
RawPadded repeat_pair(const std::vector<int32_t>& input,
                      const std::vector<int32_t>& target, int pad_num, bool delimiter) {
  const int l = static_cast<int>(input.size());
  const int stride = delimiter ? l + 1 : l;
  RawPadded raw;
  raw.copies = pad_num;
  raw.input.reserve(static_cast<size_t>(stride) * pad_num + l);
  raw.target.reserve(static_cast<size_t>(stride) * pad_num + l);
  for (int c = 0; c < pad_num; ++c) {
    raw.seg_starts.push_back(c * stride);
    raw.input.insert(raw.input.end(), input.begin(), input.end());
    raw.target.insert(raw.target.end(), target.begin(), target.end());
    if (delimiter) {
      raw.input.push_back(0);
      raw.target.push_back(0);
    }
  }
  raw.seg_starts.push_back(pad_num * stride);
  raw.input.insert(raw.input.end(), input.begin(), input.end());
  raw.target.insert(raw.target.end(), target.begin(), target.end());
  return raw;
}

}  // namespace

RawPadded rep_pad(const std::vector<int32_t>& input, const std::vector<int32_t>& target,
                  const PadPolicy& policy, Rng& rng) {
  check_pair(input, target);
  const int l = static_cast<int>(input.size());
  const int max_count = max_pad_count(l, policy.max_len);
  if (max_count <= 1) return unchanged_raw(input, target);
  const int m = resolve_m(policy.m_rule, policy.fix_k, max_count, rng);
  if (m == 0) return unchanged_raw(input, target);
  return repeat_pair(input, target, m, policy.delimiter);
}

RawPadded rep_pad_plus_with_start(const std::vector<int32_t>& input,
                                  const std::vector<int32_t>& target,
                                  const PadPolicy& policy, int start) {
  check_pair(input, target);
  const int l = static_cast<int>(input.size());
  const int n = policy.max_len;
  if (l > n - 2) throw std::invalid_argument("rep_pad_plus_with_start: sequence too long");
  if (max_pad_count(l, n) > 1)
    throw std::invalid_argument("rep_pad_plus_with_start: not the window branch");
  const int sub_len = policy.delimiter ? n - 1 - l : n - l;
  RawPadded raw;
  raw.copies = 1;
  raw.seg_starts = {0, sub_len + 1};
  raw.input = subseq_window(input, start, sub_len);
  raw.target = subseq_window(target, start, sub_len);
  raw.input.push_back(0);
  raw.target.push_back(0);
  raw.input.insert(raw.input.end(), input.begin(), input.end());
  raw.target.insert(raw.target.end(), target.begin(), target.end());
  return raw;
}

RawPadded rep_pad_plus(const std::vector<int32_t>& input,
                       const std::vector<int32_t>& target, const PadPolicy& policy,
                       Rng& rng) {
  check_pair(input, target);
  const int l = static_cast<int>(input.size());
  const int n = policy.max_len;
  if (l > n - 2) return unchanged_raw(input, target);
  if (max_pad_count(l, n) <= 1) {
    const int sub_len = policy.delimiter ? n - 1 - l : n - l;
    const int start = rng.randint(0, l - sub_len);
    return rep_pad_plus_with_start(input, target, policy, start);
  }
  return rep_pad(input, target, policy, rng);
}

PaddedSample finalize_sample(const RawPadded& raw, int n) {
  PaddedSample out;
  out.input = seq_prepare(raw.input, n);
  out.target = seq_prepare(raw.target, n);
  out.pad_copies = raw.copies;
  const int64_t shift = n - static_cast<int64_t>(raw.input.size());
  for (int32_t s : raw.seg_starts) {
    const int64_t moved = s + shift;
    if (moved < n) out.segment_starts.push_back(static_cast<int32_t>(std::max<int64_t>(0, moved)));
  }
  std::sort(out.segment_starts.begin(), out.segment_starts.end());
  out.segment_starts.erase(
      std::unique(out.segment_starts.begin(), out.segment_starts.end()),
      out.segment_starts.end());
  if (out.segment_starts.empty() || out.segment_starts.front() != 0)
    out.segment_starts.insert(out.segment_starts.begin(), 0);
  out.loss_mask.resize(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out.loss_mask[static_cast<size_t>(i)] = out.target[static_cast<size_t>(i)] != 0;
  return out;
}

PaddedSample pad_and_prepare(const std::vector<int32_t>& input,
                             const std::vector<int32_t>& target,
                             const PadPolicy& policy, Rng& rng) {
  check_pair(input, target);
  RawPadded raw;
  switch (policy.mode) {
    case PadMode::zero: raw = unchanged_raw(input, target); break;
    case PadMode::reppad: raw = rep_pad(input, target, policy, rng); break;
    case PadMode::reppad_plus: raw = rep_pad_plus(input, target, policy, rng); break;
  }
  return finalize_sample(raw, policy.max_len);
}

std::optional<PaddedSample> make_training_sample(const std::vector<int32_t>& train_items,
                                                 const PadPolicy& policy, Rng& rng) {
  if (train_items.size() < 2) return std::nullopt;
  std::vector<int32_t> input(train_items.begin(), train_items.end() - 1);
  std::vector<int32_t> target(train_items.begin() + 1, train_items.end());
  return pad_and_prepare(input, target, policy, rng);
}

}  // namespace reppad
