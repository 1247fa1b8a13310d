#pragma once
#include <cstdint>
#include <string>
#include <vector>

#include "reppad/config.hpp"
#include "reppad/corpus.hpp"
#include "reppad/eval.hpp"

namespace reppad {

enum class AblationKind { none, alpha, beta, gamma, leakage };
AblationKind ablation_from_string(const std::string& s);
std::string to_string(AblationKind k);

double metric_of(const MetricTable& t, const std::string& monitor);

struct PreparedData {
  Corpus corpus;
  std::vector<SplitSeq> split;
  int64_t raw_records = 0;   // parsed from the file
  int64_t kept_records = 0;  // surviving k-core
};

// load -> k-core -> corpus -> leave-one-out split.
PreparedData prepare_dataset(const ExperimentConfig& cfg);

struct EpochLogRow {
  int epoch = 0;
  double mean_loss = 0.0;
  int64_t samples = 0;
  int64_t active = 0;
  double val_metric = 0.0;
  double seconds = 0.0;  // training steps only; excluded from deterministic logs
};

struct RunResult {
  EvalReport report;
  std::vector<EpochLogRow> log;
  int epochs_run = 0;
  int best_epoch = 0;
  int stop_epoch = 0;
  int64_t samples_per_epoch = 0;  // last epoch
  double total_train_seconds = 0.0;
  std::string report_json;     // deterministic serialized report
  std::string policy_label;    // zero | reppad | reppad_plus | <operator>
  AblationKind ablation = AblationKind::none;
};

// One full training run on already-prepared data; writes report.json,
// train_log.csv, timing.csv, grad_hist.csv, model.ckpt (plus counts.bin under
// the repetition policies) into cfg.out_dir and appends to runs.csv.
RunResult run_on_prepared(const ExperimentConfig& cfg, const PreparedData& data,
                          AblationKind ablation = AblationKind::none);

// Convenience wrapper: prepare_dataset + run_on_prepared.
RunResult run_experiment(const ExperimentConfig& cfg);

struct GridCell {
  std::string mode;    // zero | reppad | reppad_plus
  std::string m_rule;  // "-" for the zero row
  std::string delimiter;
  bool ok = false;
  std::string error;
  MetricTable test;
};

struct GridResult {
  std::vector<GridCell> cells;  // 17 = zero + 2 modes x 4 m-rules x 2 delimiter
  std::string csv;              // aggregated comparison table
};

// Zero baseline plus {reppad, reppad_plus} x {fix, max, rand_incl_zero,
// rand_from_one} x {delimiter on, off}, all under the base seed. Failed cells are
// kept in the result with their error; completed cells still land in the CSV.
GridResult run_variant_grid(const ExperimentConfig& base);

// alpha: zero-padding with each sequence fed (recorded count + 1) times per epoch,
//        counts replayed from cfg.alpha_counts;
// beta:  zero-padding training, repetition padding applied to evaluation inputs;
// gamma: repetition padding whose copies come from uniformly drawn other users;
// leakage: self-attention with the copy-boundary attention mask enabled.
RunResult run_ablation(const ExperimentConfig& cfg, AblationKind kind);

// Loads a checkpoint and evaluates both splits (the `eval` subcommand).
RunResult evaluate_checkpoint(const ExperimentConfig& cfg, const std::string& ckpt_path);

// counts.bin: per-epoch per-user repetition counts recorded by rep runs.
void write_counts_file(const std::string& path,
                       const std::vector<std::vector<uint16_t>>& counts_by_epoch);
std::vector<std::vector<uint16_t>> read_counts_file(const std::string& path);

namespace harness_detail {
// Training samples for one epoch under the configured strategy; pure function of
// (cfg, split, epoch). When `counts_out` is non-null (repetition policies), the
// per-user pad_copies land there.
std::vector<PaddedSample> build_epoch_samples(const ExperimentConfig& cfg,
                                              const std::vector<SplitSeq>& split,
                                              int32_t vocab, int epoch,
                                              const ItemSimilarity* sim,
                                              AblationKind ablation,
                                              const std::vector<std::vector<uint16_t>>* alpha_counts,
                                              std::vector<uint16_t>* counts_out);

// Expected samples-per-epoch for the accounting assertion (repetition modes:
// |U|; slide_window: total window enumeration count).
int64_t expected_samples(const ExperimentConfig& cfg, const std::vector<SplitSeq>& split);
}  // namespace harness_detail

}  // namespace reppad
