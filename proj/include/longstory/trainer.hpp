#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "longstory/checkpoint.hpp"
#include "longstory/model.hpp"
#include "longstory/pipeline.hpp"
#include "longstory/rng.hpp"
#include "longstory/tensor.hpp"
#include "longstory/vocab.hpp"

namespace longstory {

struct TrainConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double grad_clip_norm = 1.0;
  std::size_t epochs = 1;
  std::size_t batch_size = 1;  // documents per optimizer step; recursion keeps this at 1
  std::uint64_t seed = 0;
  std::size_t eval_every = 200;  // steps between validation passes / checkpoints; 0 disables
  std::string checkpoint_dir;
  std::size_t max_steps = 0;  // 0 = run all epochs
  tok::ModelInputOptions input;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& json_text);
};

/// Adam over a ParamStore with global-norm gradient clipping. Every step
/// audits that each trainable parameter is visited exactly once.
class AdamOptimizer {
 public:
  AdamOptimizer(nn::ParamStore& params, double lr, double beta1, double beta2, double epsilon);

  void step(double grad_clip_norm);
  std::size_t step_count() const { return step_count_; }

  /// Moment tensors keyed "adam.m.<param>" / "adam.v.<param>" plus
  /// "adam.step", for checkpointing.
  std::map<std::string, nn::Tensor> export_state() const;
  void import_state(const std::map<std::string, nn::Tensor>& state);

 private:
  struct Slot {
    std::vector<double> m, v;
  };
  nn::ParamStore* params_;
  std::map<std::string, Slot> slots_;
  double lr_, beta1_, beta2_, epsilon_;
  std::size_t step_count_ = 0;
};

struct ParagraphLoss {
  double loss = 0.0;  // mean NLL per target token of this paragraph
  std::size_t tokens = 0;
  MixWeights mix;
};

struct TrainReport {
  std::vector<std::pair<std::size_t, double>> train_curve;  // (step, per-token loss)
  std::vector<std::pair<std::size_t, double>> valid_curve;
  double initial_valid_loss = 0.0;
  double final_valid_loss = 0.0;
  std::size_t steps = 0;
  std::string to_json() const;
};

/// Summed teacher-forced document loss as a closure for finite-difference
/// checks. Cross-paragraph memory carries are precomputed once at the current
/// parameters and held fixed, mirroring the detach the trainer applies
/// between paragraphs: the closure is exactly the function the tape
/// differentiates.
std::function<nn::Tensor()> frozen_document_loss(const LongStoryModel& model,
                                                 const tok::Vocabulary& vocab,
                                                 const text::PreparedDocument& doc,
                                                 const tok::ModelInputOptions& input = {});

/// Teacher-forced recursive training: gold paragraphs feed both the targets
/// and the Memory/Cheating contexts. One optimizer step per document over the
/// summed paragraph losses.
class Trainer {
 public:
  Trainer(LongStoryModel& model, const tok::Vocabulary& vocab, TrainConfig cfg);

  /// Accumulates gradients for one document (no optimizer step).
  std::vector<ParagraphLoss> train_document(const text::PreparedDocument& doc);

  /// Mean per-token validation loss (no gradient accumulation kept).
  double evaluate(const std::vector<text::PreparedDocument>& docs);

  TrainReport fit(const std::vector<text::PreparedDocument>& train_docs,
                  const std::vector<text::PreparedDocument>& valid_docs);

  /// Restores optimizer state and the training cursor from a checkpoint
  /// produced by fit(); the model itself is loaded via load_model().
  void restore(const ModelBundle& bundle);

  void save_checkpoint_file(const std::string& path, const std::string& dtype = "f64") const;

  AdamOptimizer& optimizer() { return optimizer_; }
  const tok::Vocabulary& vocab() const { return *vocab_; }

 private:
  std::vector<ParagraphLoss> run_document(const text::PreparedDocument& doc, bool accumulate);

  LongStoryModel* model_;
  const tok::Vocabulary* vocab_;
  TrainConfig cfg_;
  AdamOptimizer optimizer_;
  Rng data_rng_;
  std::size_t step_ = 0;
  std::size_t epoch_ = 0;
  std::size_t pos_in_epoch_ = 0;
  std::string epoch_rng_state_;  // data_rng_ state at the top of the current epoch
};

}  // namespace longstory
