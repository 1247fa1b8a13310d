#pragma once
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "reppad/rng.hpp"

namespace reppad {

enum class PadMode { zero, reppad, reppad_plus };
enum class MRule { fix, max, rand_incl_zero, rand_from_one };

PadMode pad_mode_from_string(const std::string& s);
MRule m_rule_from_string(const std::string& s);
std::string to_string(PadMode m);
std::string to_string(MRule r);

struct PadPolicy {
  PadMode mode = PadMode::zero;
  MRule m_rule = MRule::rand_from_one;
  int fix_k = 1;        // only used by MRule::fix
  bool delimiter = true;
  int max_len = 50;     // N
};

// Fixed-length sample after preparation. input/target have length N; loss_mask is
// target != 0; segment_starts mark where each repetition copy (or window) begins in
// final coordinates (position 0 always included), feeding the leakage mask.
struct PaddedSample {
  std::vector<int32_t> input, target;
  std::vector<uint8_t> loss_mask;
  std::vector<int32_t> segment_starts;
  int pad_copies = 0;  // recorded repetition count (alpha ablation)
};

// Left-pad with zeros below n, identity at n, keep the most recent n above.
std::vector<int32_t> seq_prepare(const std::vector<int32_t>& seq, int n);

// floor(n / train_len); how many delimiter-joined copies fit before the original.
int max_pad_count(int train_len, int n);

// fix -> min(fix_k, max_count); max -> max_count; rand_incl_zero -> U[0, max_count];
// rand_from_one -> U[1, max_count]. Random rules consume exactly one draw.
int resolve_m(MRule rule, int fix_k, int max_count, Rng& rng);

std::vector<int32_t> subseq_window(const std::vector<int32_t>& seq, int start, int len);

// Contiguous window of the given length at a uniform start (one draw, inclusive ends).
std::vector<int32_t> random_subseq(const std::vector<int32_t>& seq, int len, Rng& rng);

// Variable-length padded pair before seq_prepare.
struct RawPadded {
  std::vector<int32_t> input, target;
  std::vector<int32_t> seg_starts;  // raw offsets where copies/windows begin
  int copies = 0;
};

// Repetition padding: unchanged unless at least two copies fit; otherwise pad_num
// copies of (input [+ delimiter]) are prepended to the original pair.
RawPadded rep_pad(const std::vector<int32_t>& input, const std::vector<int32_t>& target,
                  const PadPolicy& policy, Rng& rng);

// Three-branch variant: long sequences (len > N-2) unchanged; medium sequences get a
// random contiguous window plus delimiter slot in the idle space; short sequences
// behave exactly like rep_pad.
RawPadded rep_pad_plus(const std::vector<int32_t>& input,
                       const std::vector<int32_t>& target, const PadPolicy& policy,
                       Rng& rng);

// Medium branch with an explicit window start (deterministic form used by fixtures).
RawPadded rep_pad_plus_with_start(const std::vector<int32_t>& input,
                                  const std::vector<int32_t>& target,
                                  const PadPolicy& policy, int start);

PaddedSample finalize_sample(const RawPadded& raw, int n);

// Pads (input, target) per policy.mode and applies seq_prepare.
PaddedSample pad_and_prepare(const std::vector<int32_t>& input,
                             const std::vector<int32_t>& target,
                             const PadPolicy& policy, Rng& rng);

// Derives the training pair from the training split (input = items minus last,
// target = items shifted by one) and pads it. Empty input (fewer than 2 training
// items) yields nothing.
std::optional<PaddedSample> make_training_sample(const std::vector<int32_t>& train_items,
                                                 const PadPolicy& policy, Rng& rng);

}  // namespace reppad
