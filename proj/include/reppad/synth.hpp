#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "reppad/corpus.hpp"

namespace reppad {

// Grouped first-order Markov generator with two structures.
//
// Partitioned (shared_candidates == 0, the default): items are split into
// disjoint group blocks; each item prefers a small set of successors inside
// its own group, so sequences are predictable within a group and user
// histories from different groups are mutually uninformative (which is what
// the other-user-padding ablation needs).
//
// Shared-vocabulary mixture (shared_candidates > 0): every item draws a global
// candidate set of `shared_candidates` successors, and each user group prefers
// its own `branch`-subset of that set. A single transition is then consistent
// with many groups — only a longer history pins down which chain a user
// follows — so models that exploit rich contexts outperform pure
// item-to-item statistics.
struct SynthConfig {
  int64_t num_users = 5000;
  int32_t num_items = 2000;
  int num_groups = 50;
  int branch = 4;             // preferred successors per item (and group)
  double p_pref = 0.75;       // mass on the preferred successors
  double noise = 0.05;        // chance of a uniform jump anywhere in the catalog
  int min_len = 5;            // shortest sequence (keeps 5-core intact)
  double mean_extra = 4.0;    // mean of the exponential extra length
  int max_len = 40;           // hard cap on sequence length
  int shared_candidates = 0;  // >0 switches to the shared-vocabulary mixture
  double revisit = 0.0;       // chance per step of replaying an earlier item from
                              // the user's own history (recurrent consumption,
                              // the music re-listening pattern); the chain then
                              // continues from the replayed item
  uint64_t seed = 1;

  void validate() const;
};

struct SynthResult {
  std::vector<Interaction> records;             // file order: user by user, time asc
  std::vector<std::vector<int32_t>> preferred;  // [num_items + 1]; entry 0 empty;
                                                // mixture mode: the candidate sets
  std::vector<int> item_group;                  // [num_items + 1]; entry 0 is -1;
                                                // mixture mode: all -1 (shared)
  std::vector<int> user_group;                  // [num_users]
  // mixture mode only: [num_groups][num_items + 1] per-group preferred subsets
  std::vector<std::vector<std::vector<int32_t>>> preferred_by_group;
};

SynthResult generate_synth(const SynthConfig& cfg);

// Tab-separated "user item timestamp" rows, timestamps = position in sequence.
void write_interactions_tsv(const std::vector<Interaction>& records,
                            const std::string& path);

// Ground-truth transition structure as JSON (deterministic key order).
std::string transitions_json(const SynthConfig& cfg, const SynthResult& r);

}  // namespace reppad
