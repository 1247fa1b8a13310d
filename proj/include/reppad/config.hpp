#pragma once
#include <cstdint>
#include <map>
#include <string>

#include "reppad/augment.hpp"
#include "reppad/model.hpp"
#include "reppad/padding.hpp"

namespace reppad {

// One experiment = one corpus + one backbone + exactly one augmentation strategy.
// Configurable through flat key=value files, JSON files (nested objects flatten to
// dotted keys), and key=value command-line overrides; unknown keys are errors.
struct ExperimentConfig {
  // data
  std::string dataset;       // interaction TSV
  std::string dataset_name;  // defaults to the file stem
  int user_col = 0, item_col = 1, time_col = 2;
  int kcore = 5;
  double malformed_threshold = 0.01;
  int max_len = 50;  // per-dataset N (50 default; 100 LastFM-like; 200 ML-1M-like)

  // model (max_len above is mirrored into it)
  ModelConfig model;

  // strategy: zero | reppad | reppad_plus | augment (+ augment.op)
  std::string policy = "zero";
  MRule m_rule = MRule::rand_from_one;
  int fix_k = 1;
  bool pad_delimiter = true;
  std::string augment_op;  // one of the operator names, or cmr | cmrsi
  double augment_ratio = 0.2;
  int augment_window = 3;
  int augment_count = 1;
  int sim_top_s = 10;

  // training / evaluation
  int64_t batch_size = 256;
  int max_epochs = 200;
  int patience = 20;
  double lr = 0.001;
  std::string precision = "f32";  // f32 | f64
  std::string monitor = "ndcg10";
  uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = "run_out";
  int threads = 1;
  bool eval_exclude_seen = false;  // drop already-interacted items from the candidates
  int64_t eval_batch = 256;
  std::string alpha_counts;  // recorded counts.bin consumed by the alpha ablation

  void validate() const;
  PadPolicy pad_policy() const;
  std::string policy_label() const;
  bool needs_similarity() const;
  std::map<std::string, std::string> to_flat_map() const;
};

// key=value lines ('#' comments) or a JSON object; returns dotted flat keys.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> load_config_map(const std::string& path);

// "key=value" override from the command line.
void apply_override(std::map<std::string, std::string>& m, const std::string& kv);

// Builds and validates a config; unknown or unparsable keys are hard errors.
ExperimentConfig config_from_map(const std::map<std::string, std::string>& m);

}  // namespace reppad
