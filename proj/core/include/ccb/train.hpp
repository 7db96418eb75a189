#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ccb/bias.hpp"
#include "ccb/dataset.hpp"
#include "ccb/losses.hpp"
#include "ccb/model.hpp"

namespace ccb {

/// ccb trains the joint objective; ml_baseline trains plain multi-label BCE
/// on the base scores; lmh_baseline trains BCE on the ensembled content
/// scores with no reweighting and no context branch.
enum class LossMode { ccb, ml_baseline, lmh_baseline };

enum class OptimizerKind { sgd, adam };

const char* to_string(LossMode m);
const char* to_string(OptimizerKind k);
LossMode loss_mode_from_string(const std::string& s);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  double r = 1.0;
  ReweightMode reweight_mode = ReweightMode::per_answer;
  bool use_context_label = true;  // false: all-ones context labels
  std::uint64_t seed = 0;
  int eval_every = 0;  // epochs between train-split accuracy probes; 0 = never
  LossMode loss_mode = LossMode::ccb;

  void validate() const;
};

/// Labels and bias rows gathered for a set of instances.
struct Batch {
  std::vector<const Instance*> instances;
  Eigen::MatrixXd y;  // N x |A|
  Eigen::MatrixXd b;  // N x |A|, bias table rows by qtype
};

Batch make_batch(const Split& split, const BiasTable& bias, std::span<const int> indices);

struct BatchForward {
  std::vector<InstanceForward> per_instance;
  BranchOutputs outs;
};

BatchForward forward_batch(const ModelConfig& config, const Parameters& params,
                           const Batch& batch, bool training);

/// Which scalar objective to differentiate. ml/cn/cx/p are the individual
/// losses; ccb is their sum.
enum class LossKind { ml, cn, cx, p, ccb };

double batch_loss(LossKind kind, const BranchOutputs& outs, const Batch& batch, double r,
                  ReweightMode mode, bool use_context_label);

/// Accumulated parameter gradients of `kind` over the batch.
Parameters batch_gradients(const ModelConfig& config, const Parameters& params,
                           const BatchForward& fwd, const Batch& batch, LossKind kind, double r,
                           ReweightMode mode, bool use_context_label);

/// First-order optimizer over the named parameter tensors.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, const ModelConfig& config);

  void step(Parameters& params, Parameters& grads);

 private:
  OptimizerKind kind_;
  double lr_;
  long t_ = 0;
  Parameters m_, v_;  // adam moments
};

struct StepRecord {
  int step = 0;
  LossBreakdown losses;
};

struct EvalRecord {
  int epoch = 0;
  double train_overall = 0.0;
};

struct History {
  std::vector<StepRecord> steps;
  std::vector<EvalRecord> evals;
};

/// Line-delimited records {step, l_cn, l_cx, l_p, l_ccb} (+ l_ml when set).
void save_history(const History& history, const std::filesystem::path& path);

struct TrainResult {
  Checkpoint checkpoint;
  History history;
};

/// Mini-batch training of the configured objective. The bias table must have
/// been estimated from `train_split` (checked via source_split_name).
/// Throws on divergence, naming the step.
TrainResult train(const TrainConfig& config, const ModelConfig& model_config,
                  const Split& train_split, const BiasTable& bias);

}  // namespace ccb
