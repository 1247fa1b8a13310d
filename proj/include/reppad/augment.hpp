#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "reppad/rng.hpp"

namespace reppad {

enum class AugmentOp {
  random_items,
  slide_window,
  random_seq_items,
  crop,
  mask,
  reorder,
  substitute,
  insert
};

AugmentOp augment_op_from_string(const std::string& s);
std::string to_string(AugmentOp op);

struct AugmentSpec {
  AugmentOp op = AugmentOp::crop;
  double ratio = 0.2;  // crop/mask/reorder/substitute/insert: fraction in (0,1]
  int window = 1;      // slide_window
  int count = 1;       // random_items / random_seq_items
  void validate() const;  // throws when the parameter relevant to op is out of bounds
};

// Per-item ranked most-co-occurring lists (most similar first). Computed from the
// training split only; an item never lists itself.
struct ItemSimilarity {
  int top_s = 10;
  std::vector<std::vector<int32_t>> lists;  // indexed by item id, 0 row unused
  int32_t top_of(int32_t item) const {
    if (item < 0 || static_cast<size_t>(item) >= lists.size() || lists[static_cast<size_t>(item)].empty())
      return 0;
    return lists[static_cast<size_t>(item)][0];
  }
};

// Co-occurrence within a symmetric window of 2 positions per sequence; per item the
// top_s co-occurring items ranked by count descending, ties by ascending item index.
ItemSimilarity build_similarity(const std::vector<std::vector<int32_t>>& train_sequences,
                                int top_s = 10);

// Applies one baseline operator; pure in seq, deterministic under a fixed rng seed.
//   crop       keep a contiguous window of length ceil(ratio*|seq|), uniform start
//   mask       set floor(ratio*|seq|) distinct uniform positions to token 0
//   reorder    shuffle a contiguous window of length ceil(ratio*|seq|), uniform start
//   substitute replace floor(ratio*|seq|) distinct positions with their top
//              co-occurring item (positions whose item has no list are left as-is)
//   insert     after floor(ratio*|seq|) distinct positions, insert the top
//              co-occurring item of the preceding item (no list -> nothing inserted)
//   random_items      append count items uniform over [1, vocab_size]
//   random_seq_items  append count items drawn uniformly from seq itself
//   slide_window      not applicable here; expand via enumerate_windows instead
std::vector<int32_t> apply_augment(const AugmentSpec& spec,
                                   const std::vector<int32_t>& seq, int32_t vocab_size,
                                   const ItemSimilarity* sim, Rng& rng);

// One operator drawn uniformly per call: crop/mask/reorder, plus substitute/insert
// when with_si is set (the latter two need sim).
std::vector<int32_t> apply_cmr(bool with_si, double ratio, const std::vector<int32_t>& seq,
                               int32_t vocab_size, const ItemSimilarity* sim, Rng& rng);

// All |seq|-window+1 contiguous windows in order; window above |seq| yields the
// full sequence as the single window.
std::vector<std::vector<int32_t>> enumerate_windows(const std::vector<int32_t>& seq,
                                                    int window);

}  // namespace reppad
