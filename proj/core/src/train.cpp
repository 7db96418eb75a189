#include "ccb/train.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>

#include "ccb/errors.hpp"
#include "ccb/eval.hpp"
#include "ccb/rng.hpp"
#include "ccb/version.hpp"

namespace ccb {

using nlohmann::json;

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

}  // namespace

const char* to_string(LossMode m) {
  switch (m) {
    case LossMode::ccb: return "ccb";
    case LossMode::ml_baseline: return "ml_baseline";
    case LossMode::lmh_baseline: return "lmh_baseline";
  }
  return "ccb";
}

const char* to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "sgd"; }

LossMode loss_mode_from_string(const std::string& s) {
  if (s == "ccb") return LossMode::ccb;
  if (s == "ml_baseline") return LossMode::ml_baseline;
  if (s == "lmh_baseline") return LossMode::lmh_baseline;
  throw validation_error("unknown loss mode: '" + s + "'");
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "sgd") return OptimizerKind::sgd;
  throw validation_error("unknown optimizer: '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs <= 0) throw validation_error("TrainConfig.epochs: must be > 0");
  if (batch_size <= 0) throw validation_error("TrainConfig.batch_size: must be > 0");
  if (learning_rate <= 0.0) throw validation_error("TrainConfig.learning_rate: must be > 0");
  if (r < 0.0) throw validation_error("TrainConfig.r: must be >= 0");
  if (eval_every < 0) throw validation_error("TrainConfig.eval_every: must be >= 0");
}

Batch make_batch(const Split& split, const BiasTable& bias, std::span<const int> indices) {
  Batch batch;
  const int n = static_cast<int>(indices.size());
  const int n_answers = split.answer_space.size();
  batch.instances.reserve(static_cast<std::size_t>(n));
  batch.y.resize(n, n_answers);
  batch.b.resize(n, n_answers);
  for (int i = 0; i < n; ++i) {
    const Instance& inst = split.instances[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
    batch.instances.push_back(&inst);
    batch.y.row(i) = inst.labels.transpose();
    batch.b.row(i) = bias_for(bias, inst.qtype).transpose();
  }
  return batch;
}

BatchForward forward_batch(const ModelConfig& config, const Parameters& params,
                           const Batch& batch, bool training) {
  BatchForward fwd;
  const int n = static_cast<int>(batch.instances.size());
  fwd.per_instance.reserve(static_cast<std::size_t>(n));
  fwd.outs.z_base.resize(n, config.n_answers);
  fwd.outs.z_cn.resize(n, config.n_answers);
  fwd.outs.z_cx.resize(n, config.n_answers);
  fwd.outs.z_p.resize(n, config.n_answers);
  for (int i = 0; i < n; ++i) {
    fwd.per_instance.push_back(forward_instance(config, params, *batch.instances[static_cast<std::size_t>(i)],
                                                batch.b.row(i).transpose(), training));
    const InstanceForward& f = fwd.per_instance.back();
    fwd.outs.z_base.row(i) = f.z_base.transpose();
    fwd.outs.z_cn.row(i) = f.z_cn.transpose();
    fwd.outs.z_cx.row(i) = f.z_cx.transpose();
    fwd.outs.z_p.row(i) = f.z_p.transpose();
  }
  return fwd;
}

double batch_loss(LossKind kind, const BranchOutputs& outs, const Batch& batch, double r,
                  ReweightMode mode, bool use_context_label) {
  switch (kind) {
    case LossKind::ml: return multilabel_bce(outs.z_base, batch.y);
    case LossKind::cn: return content_loss(outs.z_cn, batch.y, batch.b, r, mode);
    case LossKind::cx: return context_loss(outs.z_cx, batch.b, use_context_label);
    case LossKind::p: return predict_loss(outs.z_p, batch.y);
    case LossKind::ccb:
      return ccb_loss(outs.z_cn, outs.z_cx, outs.z_p, batch.y, batch.b, r, mode, use_context_label)
          .l_ccb;
  }
  return 0.0;
}

Parameters batch_gradients(const ModelConfig& config, const Parameters& params,
                           const BatchForward& fwd, const Batch& batch, LossKind kind, double r,
                           ReweightMode mode, bool use_context_label) {
  Parameters grads = zero_parameters(config);
  const int n = static_cast<int>(batch.instances.size());

  Eigen::MatrixXd g_base, g_cn, g_cx, g_p;
  if (kind == LossKind::ml) g_base = multilabel_bce_grad(fwd.outs.z_base, batch.y);
  if (kind == LossKind::cn || kind == LossKind::ccb)
    g_cn = content_loss_grad(fwd.outs.z_cn, batch.y, batch.b, r, mode);
  if (kind == LossKind::cx || kind == LossKind::ccb)
    g_cx = context_loss_grad(fwd.outs.z_cx, batch.b, use_context_label);
  if (kind == LossKind::p || kind == LossKind::ccb)
    g_p = predict_loss_grad(fwd.outs.z_p, batch.y);

  for (int i = 0; i < n; ++i) {
    ScoreGrads up;
    if (g_base.size() > 0) up.dz_base = g_base.row(i).transpose();
    if (g_cn.size() > 0) up.dz_cn = g_cn.row(i).transpose();
    if (g_cx.size() > 0) up.dz_cx = g_cx.row(i).transpose();
    if (g_p.size() > 0) up.dz_p = g_p.row(i).transpose();
    backward_instance(config, params, fwd.per_instance[static_cast<std::size_t>(i)], up, grads);
  }
  return grads;
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, const ModelConfig& config)
    : kind_(kind), lr_(learning_rate), m_(zero_parameters(config)), v_(zero_parameters(config)) {}

void Optimizer::step(Parameters& params, Parameters& grads) {
  const auto p_refs = tensor_refs(params);
  const auto g_refs = tensor_refs(grads);
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t t = 0; t < p_refs.size(); ++t)
      for (std::ptrdiff_t i = 0; i < p_refs[t].size; ++i)
        p_refs[t].data[i] -= lr_ * g_refs[t].data[i];
    return;
  }
  ++t_;
  const auto m_refs = tensor_refs(m_);
  const auto v_refs = tensor_refs(v_);
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
  for (std::size_t t = 0; t < p_refs.size(); ++t) {
    for (std::ptrdiff_t i = 0; i < p_refs[t].size; ++i) {
      const double g = g_refs[t].data[i];
      double& m = m_refs[t].data[i];
      double& v = v_refs[t].data[i];
      m = kAdamBeta1 * m + (1.0 - kAdamBeta1) * g;
      v = kAdamBeta2 * v + (1.0 - kAdamBeta2) * g * g;
      p_refs[t].data[i] -= lr_ * (m / bc1) / (std::sqrt(v / bc2) + kAdamEps);
    }
  }
}

void save_history(const History& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
  for (const StepRecord& rec : history.steps) {
    json j;
    j["step"] = rec.step;
    if (rec.losses.l_ml) j["l_ml"] = *rec.losses.l_ml;
    j["l_cn"] = rec.losses.l_cn;
    j["l_cx"] = rec.losses.l_cx;
    j["l_p"] = rec.losses.l_p;
    j["l_ccb"] = rec.losses.l_ccb;
    out << j.dump() << '\n';
  }
  for (const EvalRecord& rec : history.evals) {
    json j;
    j["epoch"] = rec.epoch;
    j["train_overall"] = rec.train_overall;
    out << j.dump() << '\n';
  }
  if (!out) throw io_error("failed writing '" + path.string() + "'");
}

TrainResult train(const TrainConfig& config, const ModelConfig& model_config,
                  const Split& train_split, const BiasTable& bias) {
  config.validate();
  model_config.validate();
  train_split.validate();
  if (bias.source_split_name != train_split.split_name)
    throw validation_error("train: bias table was estimated from '" + bias.source_split_name +
                           "', not from the training split '" + train_split.split_name + "'");
  if (bias.answers != train_split.answer_space.answers)
    throw validation_error("train: bias table answer order does not match the split");
  if (bias.type_names != train_split.qtype_table.type_names)
    throw validation_error("train: bias table qtype rows do not match the split");
  if (model_config.n_answers != train_split.answer_space.size())
    throw validation_error("train: model n_answers != split answer space size");
  if (model_config.d_v_in != train_split.d_v)
    throw validation_error("train: model d_v_in != split region feature dim");
  if (model_config.vocab_size < train_split.vocab_size)
    throw validation_error("train: model vocab smaller than split vocabulary");

  // lmh_baseline is the plain ensemble objective: no reweighting.
  const double r_eff = config.loss_mode == LossMode::lmh_baseline ? 0.0 : config.r;

  Parameters params = init_parameters(model_config);
  Optimizer opt(config.optimizer, config.learning_rate, model_config);
  Rng rng(config.seed);

  std::vector<int> order(train_split.instances.size());
  std::iota(order.begin(), order.end(), 0);

  History history;
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t len = std::min(static_cast<std::size_t>(config.batch_size), order.size() - start);
      const Batch batch = make_batch(train_split, bias, {order.data() + start, len});
      const BatchForward fwd = forward_batch(model_config, params, batch, true);

      StepRecord rec;
      rec.step = step;
      rec.losses.batch_size = static_cast<int>(len);
      LossKind kind = LossKind::ccb;
      switch (config.loss_mode) {
        case LossMode::ccb:
          rec.losses = ccb_loss(fwd.outs.z_cn, fwd.outs.z_cx, fwd.outs.z_p, batch.y, batch.b,
                                r_eff, config.reweight_mode, config.use_context_label);
          rec.losses.batch_size = static_cast<int>(len);
          kind = LossKind::ccb;
          break;
        case LossMode::ml_baseline:
          rec.losses.l_ml = multilabel_bce(fwd.outs.z_base, batch.y);
          kind = LossKind::ml;
          break;
        case LossMode::lmh_baseline:
          rec.losses.l_cn = content_loss(fwd.outs.z_cn, batch.y, batch.b, r_eff, config.reweight_mode);
          rec.losses.l_ccb = rec.losses.l_cn + rec.losses.l_cx + rec.losses.l_p;
          kind = LossKind::cn;
          break;
      }
      if (!rec.losses.finite())
        throw std::runtime_error("training diverged at step " + std::to_string(step) +
                                 " (non-finite loss); consider a lower learning rate");
      history.steps.push_back(rec);

      Parameters grads = batch_gradients(model_config, params, fwd, batch, kind, r_eff,
                                         config.reweight_mode, config.use_context_label);
      opt.step(params, grads);
      ++step;
    }

    if (config.eval_every > 0 && (epoch + 1) % config.eval_every == 0) {
      // Train-split accuracy probe. Computed inline: the public evaluate()
      // refuses bias tables sourced from the split under evaluation, which is
      // exactly the pairing this diagnostic needs.
      double credit = 0.0;
      for (const Instance& inst : train_split.instances) {
        const InstanceForward f = forward_instance(model_config, params, inst,
                                                   bias_for(bias, inst.qtype), false);
        const Eigen::VectorXd& z = config.loss_mode == LossMode::ccb
                                       ? f.z_p
                                       : (config.loss_mode == LossMode::lmh_baseline ? f.z_cn
                                                                                     : f.z_base);
        credit += vqa_credit(z, inst.labels);
      }
      history.evals.push_back(
          {epoch + 1, 100.0 * credit / static_cast<double>(train_split.instances.size())});
    }
  }

  TrainResult result;
  result.checkpoint.config = model_config;
  result.checkpoint.params = std::move(params);
  result.checkpoint.rng_state = rng.state();
  result.checkpoint.loss_mode = to_string(config.loss_mode);
  result.checkpoint.reweight_r = r_eff;
  result.checkpoint.bias_source = bias.source_split_name;
  result.history = std::move(history);
  return result;
}

}  // namespace ccb
