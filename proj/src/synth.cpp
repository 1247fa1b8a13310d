#include "reppad/synth.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "reppad/rng.hpp"

namespace reppad {

void SynthConfig::validate() const {
  if (num_users < 1 || num_items < 1) throw std::invalid_argument("synth: need users and items");
  if (num_groups < 1 || num_groups > num_items)
    throw std::invalid_argument("synth: num_groups must be in [1, num_items]");
  if (branch < 1) throw std::invalid_argument("synth: branch must be >= 1");
  if (!(p_pref >= 0.0 && p_pref <= 1.0) || !(noise >= 0.0 && noise <= 1.0))
    throw std::invalid_argument("synth: p_pref and noise must be in [0, 1]");
  if (min_len < 1 || max_len < min_len)
    throw std::invalid_argument("synth: need 1 <= min_len <= max_len");
  if (mean_extra < 0.0) throw std::invalid_argument("synth: mean_extra must be >= 0");
  if (!(revisit >= 0.0 && revisit <= 1.0))
    throw std::invalid_argument("synth: revisit must be in [0, 1]");
  if (shared_candidates < 0)
    throw std::invalid_argument("synth: shared_candidates must be >= 0");
  if (shared_candidates > 0) {
    if (shared_candidates < branch)
      throw std::invalid_argument("synth: shared_candidates must be >= branch");
    if (shared_candidates > num_items - 1)
      throw std::invalid_argument("synth: shared_candidates must leave room to exclude the item itself");
  }
}

namespace {

std::string pad_id(const char* prefix, int64_t v, int width) {
  std::string d = std::to_string(v);
  if (static_cast<int>(d.size()) < width) d.insert(0, static_cast<size_t>(width) - d.size(), '0');
  return prefix + d;
}

// `want` distinct picks from `pool`, skipping `self` (0 disables the skip).
std::vector<int32_t> sample_distinct(Rng& rng, const std::vector<int32_t>& pool,
                                     int want, int32_t self) {
  std::vector<int32_t> out;
  while (static_cast<int>(out.size()) < want) {
    int32_t c = pool[rng.next_below(pool.size())];
    if (c == self) continue;
    bool dup = false;
    for (int32_t s : out) dup = dup || s == c;
    if (!dup) out.push_back(c);
  }
  return out;
}

}  // namespace

SynthResult generate_synth(const SynthConfig& cfg) {
  cfg.validate();
  SynthResult r;
  const bool mixture = cfg.shared_candidates > 0;

  // contiguous group blocks: group g owns items [first[g], first[g+1]);
  // unused in mixture mode, where every group draws from the whole catalog
  std::vector<int32_t> first(static_cast<size_t>(cfg.num_groups) + 1);
  for (int g = 0; g <= cfg.num_groups; ++g)
    first[static_cast<size_t>(g)] =
        1 + static_cast<int32_t>(static_cast<int64_t>(cfg.num_items) * g / cfg.num_groups);

  r.item_group.assign(static_cast<size_t>(cfg.num_items) + 1, -1);
  if (!mixture)
    for (int g = 0; g < cfg.num_groups; ++g)
      for (int32_t i = first[static_cast<size_t>(g)]; i < first[static_cast<size_t>(g) + 1]; ++i)
        r.item_group[static_cast<size_t>(i)] = g;

  r.preferred.assign(static_cast<size_t>(cfg.num_items) + 1, {});
  if (mixture) {
    // global candidate sets, then one preferred subset per (group, item)
    std::vector<int32_t> catalog(static_cast<size_t>(cfg.num_items));
    for (int32_t i = 1; i <= cfg.num_items; ++i) catalog[static_cast<size_t>(i) - 1] = i;
    for (int32_t i = 1; i <= cfg.num_items; ++i) {
      Rng rng = derive_stream(cfg.seed, "cand", static_cast<uint64_t>(i));
      r.preferred[static_cast<size_t>(i)] =
          sample_distinct(rng, catalog, cfg.shared_candidates, i);
    }
    // Each group prefers a contiguous window (wrapping) of every item's ordered
    // candidate list, anchored at the group's offset. One shared latent — the
    // offset — explains all of a group's preferences, so taste is learnable
    // instead of being |groups| * |items| unrelated facts, yet any single
    // transition stays consistent with `branch` different offsets.
    r.preferred_by_group.assign(static_cast<size_t>(cfg.num_groups), {});
    for (int g = 0; g < cfg.num_groups; ++g) {
      const int offset = static_cast<int>(static_cast<int64_t>(g) * cfg.shared_candidates /
                                          cfg.num_groups);
      auto& per_item = r.preferred_by_group[static_cast<size_t>(g)];
      per_item.assign(static_cast<size_t>(cfg.num_items) + 1, {});
      for (int32_t i = 1; i <= cfg.num_items; ++i) {
        const auto& cand = r.preferred[static_cast<size_t>(i)];
        auto& succ = per_item[static_cast<size_t>(i)];
        succ.reserve(static_cast<size_t>(cfg.branch));
        for (int k = 0; k < cfg.branch; ++k)
          succ.push_back(cand[static_cast<size_t>((offset + k) % cfg.shared_candidates)]);
      }
    }
  } else {
    // preferred successors, drawn within the item's group (self allowed to
    // repeat only when the group is a singleton)
    for (int32_t i = 1; i <= cfg.num_items; ++i) {
      Rng rng = derive_stream(cfg.seed, "chain", static_cast<uint64_t>(i));
      const int g = r.item_group[static_cast<size_t>(i)];
      const int32_t lo = first[static_cast<size_t>(g)], hi = first[static_cast<size_t>(g) + 1];
      const int32_t span = hi - lo;
      auto& succ = r.preferred[static_cast<size_t>(i)];
      const int want = std::min<int>(cfg.branch, span > 1 ? span - 1 : 1);
      while (static_cast<int>(succ.size()) < want) {
        int32_t c = lo + static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(span)));
        if (c == i && span > 1) continue;
        bool dup = false;
        for (int32_t s : succ) dup = dup || s == c;
        if (!dup) succ.push_back(c);
      }
    }
  }

  r.user_group.resize(static_cast<size_t>(cfg.num_users));
  const int id_width = static_cast<int>(std::to_string(cfg.num_users).size());
  const int item_width = static_cast<int>(std::to_string(cfg.num_items).size());
  for (int64_t u = 0; u < cfg.num_users; ++u) {
    Rng rng = derive_stream(cfg.seed, "user", static_cast<uint64_t>(u));
    const int g = static_cast<int>(rng.next_below(static_cast<uint64_t>(cfg.num_groups)));
    r.user_group[static_cast<size_t>(u)] = g;
    const int32_t lo = first[static_cast<size_t>(g)], hi = first[static_cast<size_t>(g) + 1];

    int len = cfg.min_len;
    if (cfg.mean_extra > 0.0)
      len += static_cast<int>(std::floor(-cfg.mean_extra * std::log1p(-rng.next_double())));
    len = std::min(len, cfg.max_len);

    const std::string uid = pad_id("u", u, id_width);
    std::vector<int32_t> hist;
    hist.reserve(static_cast<size_t>(len));
    int32_t cur = mixture
                      ? 1 + static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(cfg.num_items)))
                      : lo + static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(hi - lo)));
    for (int t = 0; t < len; ++t) {
      r.records.push_back({uid, pad_id("i", cur, item_width), t});
      hist.push_back(cur);
      if (cfg.revisit > 0.0) {
        // recurrent consumption: replay a strictly earlier item of this user's
        // own sequence, then let the chain continue from there (never fires on
        // the first step; draws nothing when the feature is disabled)
        const double rr = rng.next_double();
        if (rr < cfg.revisit && t >= 1) {
          cur = hist[rng.next_below(static_cast<uint64_t>(t))];
          continue;
        }
      }
      const double roll = rng.next_double();
      if (roll < cfg.noise) {
        cur = 1 + static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(cfg.num_items)));
      } else if (roll < cfg.noise + (1.0 - cfg.noise) * cfg.p_pref) {
        const auto& succ = mixture
                               ? r.preferred_by_group[static_cast<size_t>(g)][static_cast<size_t>(cur)]
                               : r.preferred[static_cast<size_t>(cur)];
        cur = succ[rng.next_below(succ.size())];
      } else if (mixture) {
        // uniform over the item's global candidate set: group-agnostic drift
        const auto& cand = r.preferred[static_cast<size_t>(cur)];
        cur = cand[rng.next_below(cand.size())];
      } else {
        // uniform inside the current item's group
        const int cg = r.item_group[static_cast<size_t>(cur)];
        const int32_t clo = first[static_cast<size_t>(cg)];
        const int32_t cspan = first[static_cast<size_t>(cg) + 1] - clo;
        cur = clo + static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(cspan)));
      }
    }
  }
  return r;
}

void write_interactions_tsv(const std::vector<Interaction>& records,
                            const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  for (const auto& rec : records)
    os << rec.user << '\t' << rec.item << '\t' << rec.ts << '\n';
  if (!os) throw std::runtime_error("write failed for " + path);
}

std::string transitions_json(const SynthConfig& cfg, const SynthResult& r) {
  nlohmann::ordered_json j;
  j["num_users"] = cfg.num_users;
  j["num_items"] = cfg.num_items;
  j["num_groups"] = cfg.num_groups;
  j["branch"] = cfg.branch;
  j["p_pref"] = cfg.p_pref;
  j["noise"] = cfg.noise;
  j["seed"] = cfg.seed;
  nlohmann::ordered_json pref = nlohmann::ordered_json::array();
  for (const auto& lst : r.preferred) pref.push_back(lst);
  j["preferred"] = std::move(pref);
  j["item_group"] = r.item_group;
  if (cfg.shared_candidates > 0) {
    j["shared_candidates"] = cfg.shared_candidates;
    nlohmann::ordered_json groups = nlohmann::ordered_json::array();
    for (const auto& per_item : r.preferred_by_group) {
      nlohmann::ordered_json one = nlohmann::ordered_json::array();
      for (const auto& lst : per_item) one.push_back(lst);
      groups.push_back(std::move(one));
    }
    j["preferred_by_group"] = std::move(groups);
  }
  return j.dump(2);
}

}  // namespace reppad
