#include "ccb/model.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>

#include "ccb/errors.hpp"
#include "ccb/mathfn.hpp"
#include "ccb/rng.hpp"
#include "ccb/version.hpp"

namespace ccb {

using nlohmann::json;

namespace {

// Bias entries are clipped into [kBiasClip, 1] before the log.
constexpr double kBiasClip = 1e-8;

}  // namespace

const char* to_string(EnsembleMode m) {
  return m == EnsembleMode::learned_mixin ? "learned_mixin" : "fixed_log_bias";
}
const char* to_string(FusionMode m) { return m == FusionMode::masked ? "masked" : "literal"; }
const char* to_string(InferenceBias m) { return m == InferenceBias::drop ? "drop" : "keep"; }

EnsembleMode ensemble_mode_from_string(const std::string& s) {
  if (s == "learned_mixin") return EnsembleMode::learned_mixin;
  if (s == "fixed_log_bias") return EnsembleMode::fixed_log_bias;
  throw validation_error("unknown ensemble_mode: '" + s + "'");
}
FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "masked") return FusionMode::masked;
  if (s == "literal") return FusionMode::literal;
  throw validation_error("unknown fusion_mode: '" + s + "'");
}
InferenceBias inference_bias_from_string(const std::string& s) {
  if (s == "drop") return InferenceBias::drop;
  if (s == "keep") return InferenceBias::keep;
  throw validation_error("unknown inference_bias: '" + s + "'");
}

void ModelConfig::validate() const {
  if (d_q <= 0 || d_v <= 0 || d_m <= 0 || d_v_in <= 0)
    throw validation_error("ModelConfig: dims must be positive");
  if (vocab_size <= 0) throw validation_error("ModelConfig: vocab_size must be positive");
  if (n_answers < 2) throw validation_error("ModelConfig: n_answers must be >= 2");
}

ModelConfig ModelConfig::for_split(const Split& split) {
  ModelConfig cfg;
  cfg.d_v_in = split.d_v;
  cfg.vocab_size = split.vocab_size;
  cfg.n_answers = split.answer_space.size();
  return cfg;
}

bool Parameters::all_finite() const {
  auto& self = const_cast<Parameters&>(*this);
  for (const TensorRef& t : tensor_refs(self))
    for (std::ptrdiff_t i = 0; i < t.size; ++i)
      if (!std::isfinite(t.data[i])) return false;
  return true;
}

std::vector<TensorRef> tensor_refs(Parameters& p) {
  return {
      {"emb", p.emb.data(), p.emb.size()},
      {"q_enc_w", p.q_enc_w.data(), p.q_enc_w.size()},
      {"q_enc_b", p.q_enc_b.data(), p.q_enc_b.size()},
      {"att_w", p.att_w.data(), p.att_w.size()},
      {"v_proj_w", p.v_proj_w.data(), p.v_proj_w.size()},
      {"v_proj_b", p.v_proj_b.data(), p.v_proj_b.size()},
      {"fuse_q_w", p.fuse_q_w.data(), p.fuse_q_w.size()},
      {"fuse_q_b", p.fuse_q_b.data(), p.fuse_q_b.size()},
      {"fuse_v_w", p.fuse_v_w.data(), p.fuse_v_w.size()},
      {"fuse_v_b", p.fuse_v_b.data(), p.fuse_v_b.size()},
      {"cls_w", p.cls_w.data(), p.cls_w.size()},
      {"cls_b", p.cls_b.data(), p.cls_b.size()},
      {"gate_w", p.gate_w.data(), p.gate_w.size()},
      {"gate_b", &p.gate_b, 1},
      {"ctx_q_w", p.ctx_q_w.data(), p.ctx_q_w.size()},
      {"ctx_q_b", p.ctx_q_b.data(), p.ctx_q_b.size()},
      {"ctx_v_w", p.ctx_v_w.data(), p.ctx_v_w.size()},
      {"ctx_v_b", p.ctx_v_b.data(), p.ctx_v_b.size()},
      {"ctx_cls_w", p.ctx_cls_w.data(), p.ctx_cls_w.size()},
      {"ctx_cls_b", p.ctx_cls_b.data(), p.ctx_cls_b.size()},
  };
}

Parameters zero_parameters(const ModelConfig& c) {
  c.validate();
  Parameters p;
  p.emb = Eigen::MatrixXd::Zero(c.vocab_size, c.d_q);
  p.q_enc_w = Eigen::MatrixXd::Zero(c.d_q, c.d_q);
  p.q_enc_b = Eigen::VectorXd::Zero(c.d_q);
  p.att_w = Eigen::MatrixXd::Zero(c.d_v_in, c.d_q);
  p.v_proj_w = Eigen::MatrixXd::Zero(c.d_v, c.d_v_in);
  p.v_proj_b = Eigen::VectorXd::Zero(c.d_v);
  p.fuse_q_w = Eigen::MatrixXd::Zero(c.d_m, c.d_q);
  p.fuse_q_b = Eigen::VectorXd::Zero(c.d_m);
  p.fuse_v_w = Eigen::MatrixXd::Zero(c.d_m, c.d_v);
  p.fuse_v_b = Eigen::VectorXd::Zero(c.d_m);
  p.cls_w = Eigen::MatrixXd::Zero(c.n_answers, c.d_m);
  p.cls_b = Eigen::VectorXd::Zero(c.n_answers);
  p.gate_w = Eigen::VectorXd::Zero(c.d_m);
  p.gate_b = 0.0;
  p.ctx_q_w = Eigen::MatrixXd::Zero(c.d_m, c.d_q);
  p.ctx_q_b = Eigen::VectorXd::Zero(c.d_m);
  p.ctx_v_w = Eigen::MatrixXd::Zero(c.d_m, c.d_v);
  p.ctx_v_b = Eigen::VectorXd::Zero(c.d_m);
  p.ctx_cls_w = Eigen::MatrixXd::Zero(c.n_answers, c.d_m);
  p.ctx_cls_b = Eigen::VectorXd::Zero(c.n_answers);
  return p;
}

namespace {

void xavier_fill(Eigen::Ref<Eigen::MatrixXd> w, int fan_in, int fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / (fan_in + fan_out));
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = (2.0 * rng.uniform01() - 1.0) * a;
}

}  // namespace

Parameters init_parameters(const ModelConfig& c) {
  Parameters p = zero_parameters(c);
  Rng rng(c.init_seed);
  xavier_fill(p.emb, c.vocab_size, c.d_q, rng);
  xavier_fill(p.q_enc_w, c.d_q, c.d_q, rng);
  xavier_fill(p.att_w, c.d_q, c.d_v_in, rng);
  xavier_fill(p.v_proj_w, c.d_v_in, c.d_v, rng);
  xavier_fill(p.fuse_q_w, c.d_q, c.d_m, rng);
  xavier_fill(p.fuse_v_w, c.d_v, c.d_m, rng);
  xavier_fill(p.cls_w, c.d_m, c.n_answers, rng);
  xavier_fill(p.gate_w, c.d_m, 1, rng);
  xavier_fill(p.ctx_q_w, c.d_q, c.d_m, rng);
  xavier_fill(p.ctx_v_w, c.d_v, c.d_m, rng);
  xavier_fill(p.ctx_cls_w, c.d_m, c.n_answers, rng);
  return p;
}

Eigen::VectorXd encode_question(const ModelConfig& config, const Parameters& params,
                                std::span<const int> tokens) {
  if (tokens.empty()) throw validation_error("encode_question: empty question");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(config.d_q);
  for (int tok : tokens) {
    if (tok < 0 || tok >= config.vocab_size)
      throw validation_error("encode_question: token id " + std::to_string(tok) +
                             " outside vocabulary");
    mean += params.emb.row(tok).transpose();
  }
  mean /= static_cast<double>(tokens.size());
  return ((params.q_enc_w * mean + params.q_enc_b).array().tanh()).matrix();
}

ImageEncoding encode_image(const ModelConfig& config, const Parameters& params,
                           const Eigen::MatrixXd& image_features, const Eigen::VectorXd& fq) {
  if (image_features.rows() < 1) throw validation_error("encode_image: need at least one region");
  if (image_features.cols() != config.d_v_in)
    throw validation_error("encode_image: region feature dim != d_v_in");
  if (fq.size() != config.d_q) throw validation_error("encode_image: fq dim != d_q");

  const Eigen::VectorXd query = params.att_w * fq;
  Eigen::VectorXd scores = image_features * query;
  const double max_s = scores.maxCoeff();
  Eigen::VectorXd att = (scores.array() - max_s).exp();
  att /= att.sum();
  const Eigen::VectorXd pooled = image_features.transpose() * att;

  ImageEncoding out;
  out.attention = att;
  out.fv = ((params.v_proj_w * pooled + params.v_proj_b).array().tanh()).matrix();
  return out;
}

Eigen::VectorXd base_forward(const ModelConfig& config, const Parameters& params,
                             const Eigen::VectorXd& fq, const Eigen::VectorXd& fv) {
  if (fq.size() != config.d_q || fv.size() != config.d_v)
    throw validation_error("base_forward: feature shape mismatch");
  const Eigen::VectorXd pq = params.fuse_q_w * fq + params.fuse_q_b;
  const Eigen::VectorXd pv = params.fuse_v_w * fv + params.fuse_v_b;
  const Eigen::VectorXd h = pq.cwiseProduct(pv);
  return params.cls_w * h + params.cls_b;
}

Eigen::VectorXd content_forward(const ModelConfig& config, const Parameters& params,
                                const Eigen::VectorXd& z_base, const Eigen::VectorXd& h,
                                const Eigen::VectorXd& bias, bool training) {
  if (z_base.size() != config.n_answers || bias.size() != config.n_answers)
    throw validation_error("content_forward: score/bias shape mismatch");
  if (h.size() != config.d_m) throw validation_error("content_forward: hidden shape mismatch");
  if (!training && config.inference_bias == InferenceBias::drop) return z_base;

  const Eigen::VectorXd log_bias =
      bias.array().max(kBiasClip).min(1.0).log().matrix();
  if (config.ensemble_mode == EnsembleMode::learned_mixin) {
    const double gate = softplus(params.gate_w.dot(h) + params.gate_b);
    return z_base + gate * log_bias;
  }
  return z_base + log_bias;
}

Eigen::VectorXd context_forward(const ModelConfig& config, const Parameters& params,
                                const Eigen::VectorXd& fq, const Eigen::VectorXd& fv) {
  if (fq.size() != config.d_q || fv.size() != config.d_v)
    throw validation_error("context_forward: feature shape mismatch");
  const Eigen::VectorXd cq = params.ctx_q_w * fq + params.ctx_q_b;
  const Eigen::VectorXd cv = params.ctx_v_w * fv + params.ctx_v_b;
  return params.ctx_cls_w * cq.cwiseProduct(cv) + params.ctx_cls_b;
}

Eigen::VectorXd joint_predict(const Eigen::VectorXd& z_cn, const Eigen::VectorXd& z_cx,
                              FusionMode mode) {
  if (z_cn.size() != z_cx.size()) throw validation_error("joint_predict: shape mismatch");
  if (mode == FusionMode::masked) {
    Eigen::VectorXd mask(z_cx.size());
    for (int j = 0; j < z_cx.size(); ++j) mask(j) = sigmoid(z_cx(j));
    return z_cn.cwiseProduct(mask);
  }
  return z_cn.cwiseProduct(z_cx);
}

InstanceForward forward_instance(const ModelConfig& config, const Parameters& params,
                                 const Instance& inst, const Eigen::VectorXd& bias,
                                 bool training) {
  InstanceForward f;
  f.tokens = inst.question_tokens;
  f.regions = inst.image_features;

  // question encoder
  if (f.tokens.empty()) throw validation_error("forward_instance: empty question");
  f.emb_mean = Eigen::VectorXd::Zero(config.d_q);
  for (int tok : f.tokens) {
    if (tok < 0 || tok >= config.vocab_size)
      throw validation_error("forward_instance: token id outside vocabulary");
    f.emb_mean += params.emb.row(tok).transpose();
  }
  f.emb_mean /= static_cast<double>(f.tokens.size());
  f.fq = ((params.q_enc_w * f.emb_mean + params.q_enc_b).array().tanh()).matrix();

  // image encoder with question-conditioned attention
  if (f.regions.rows() < 1) throw validation_error("forward_instance: zero regions");
  if (f.regions.cols() != config.d_v_in)
    throw validation_error("forward_instance: region feature dim != d_v_in");
  f.att_query = params.att_w * f.fq;
  Eigen::VectorXd scores = f.regions * f.att_query;
  f.att = (scores.array() - scores.maxCoeff()).exp();
  f.att /= f.att.sum();
  f.pooled = f.regions.transpose() * f.att;
  f.fv = ((params.v_proj_w * f.pooled + params.v_proj_b).array().tanh()).matrix();

  // base
  f.fuse_q = params.fuse_q_w * f.fq + params.fuse_q_b;
  f.fuse_v = params.fuse_v_w * f.fv + params.fuse_v_b;
  f.h = f.fuse_q.cwiseProduct(f.fuse_v);
  f.z_base = params.cls_w * f.h + params.cls_b;

  // content branch ensemble
  f.bias_applied = training || config.inference_bias == InferenceBias::keep;
  if (f.bias_applied) {
    if (bias.size() != config.n_answers)
      throw validation_error("forward_instance: bias vector length != n_answers");
    f.log_bias = bias.array().max(kBiasClip).min(1.0).log().matrix();
    if (config.ensemble_mode == EnsembleMode::learned_mixin) {
      f.gate_pre = params.gate_w.dot(f.h) + params.gate_b;
      f.gate = softplus(f.gate_pre);
      f.z_cn = f.z_base + f.gate * f.log_bias;
    } else {
      f.z_cn = f.z_base + f.log_bias;
    }
  } else {
    f.z_cn = f.z_base;
  }

  // context branch
  f.ctx_q = params.ctx_q_w * f.fq + params.ctx_q_b;
  f.ctx_v = params.ctx_v_w * f.fv + params.ctx_v_b;
  f.hc = f.ctx_q.cwiseProduct(f.ctx_v);
  f.z_cx = params.ctx_cls_w * f.hc + params.ctx_cls_b;

  f.z_p = joint_predict(f.z_cn, f.z_cx, config.fusion_mode);
  return f;
}

void backward_instance(const ModelConfig& config, const Parameters& params,
                       const InstanceForward& f, const ScoreGrads& upstream, Parameters& grads) {
  const int A = config.n_answers;
  auto or_zero = [A](const Eigen::VectorXd& v) {
    return v.size() == 0 ? Eigen::VectorXd::Zero(A).eval() : v;
  };
  const Eigen::VectorXd dz_p = or_zero(upstream.dz_p);
  Eigen::VectorXd dz_cn = or_zero(upstream.dz_cn);
  Eigen::VectorXd dz_cx = or_zero(upstream.dz_cx);

  // joint prediction product rule
  if (config.fusion_mode == FusionMode::masked) {
    Eigen::VectorXd mask(A);
    for (int j = 0; j < A; ++j) mask(j) = sigmoid(f.z_cx(j));
    dz_cn += dz_p.cwiseProduct(mask);
    dz_cx += dz_p.cwiseProduct(f.z_cn)
                 .cwiseProduct(mask)
                 .cwiseProduct((Eigen::VectorXd::Ones(A) - mask));
  } else {
    dz_cn += dz_p.cwiseProduct(f.z_cx);
    dz_cx += dz_p.cwiseProduct(f.z_cn);
  }

  // content ensemble: z_cn = z_base + softplus(gate_pre) * log_bias
  Eigen::VectorXd dz_base = or_zero(upstream.dz_base) + dz_cn;
  Eigen::VectorXd dh = Eigen::VectorXd::Zero(config.d_m);
  if (f.bias_applied && config.ensemble_mode == EnsembleMode::learned_mixin) {
    const double dgate = dz_cn.dot(f.log_bias);
    const double dgate_pre = dgate * sigmoid(f.gate_pre);  // softplus'
    grads.gate_w += dgate_pre * f.h;
    grads.gate_b += dgate_pre;
    dh += dgate_pre * params.gate_w;
  }

  // classifier and fusion core
  grads.cls_w += dz_base * f.h.transpose();
  grads.cls_b += dz_base;
  dh += params.cls_w.transpose() * dz_base;

  const Eigen::VectorXd dfuse_q = dh.cwiseProduct(f.fuse_v);
  const Eigen::VectorXd dfuse_v = dh.cwiseProduct(f.fuse_q);
  grads.fuse_q_w += dfuse_q * f.fq.transpose();
  grads.fuse_q_b += dfuse_q;
  grads.fuse_v_w += dfuse_v * f.fv.transpose();
  grads.fuse_v_b += dfuse_v;
  Eigen::VectorXd dfq = params.fuse_q_w.transpose() * dfuse_q;
  Eigen::VectorXd dfv = params.fuse_v_w.transpose() * dfuse_v;

  // context head
  grads.ctx_cls_w += dz_cx * f.hc.transpose();
  grads.ctx_cls_b += dz_cx;
  const Eigen::VectorXd dhc = params.ctx_cls_w.transpose() * dz_cx;
  const Eigen::VectorXd dctx_q = dhc.cwiseProduct(f.ctx_v);
  const Eigen::VectorXd dctx_v = dhc.cwiseProduct(f.ctx_q);
  grads.ctx_q_w += dctx_q * f.fq.transpose();
  grads.ctx_q_b += dctx_q;
  grads.ctx_v_w += dctx_v * f.fv.transpose();
  grads.ctx_v_b += dctx_v;
  if (!config.detach_context_encoders) {
    dfq += params.ctx_q_w.transpose() * dctx_q;
    dfv += params.ctx_v_w.transpose() * dctx_v;
  }

  // visual projection (tanh) and attention softmax
  const Eigen::VectorXd dv_pre =
      dfv.cwiseProduct((1.0 - f.fv.array().square()).matrix());
  grads.v_proj_w += dv_pre * f.pooled.transpose();
  grads.v_proj_b += dv_pre;
  const Eigen::VectorXd dpooled = params.v_proj_w.transpose() * dv_pre;

  const Eigen::VectorXd datt = f.regions * dpooled;
  const double att_dot = f.att.dot(datt);
  const Eigen::VectorXd dscores =
      f.att.cwiseProduct(datt - Eigen::VectorXd::Constant(f.att.size(), att_dot));
  const Eigen::VectorXd dquery = f.regions.transpose() * dscores;
  grads.att_w += dquery * f.fq.transpose();
  dfq += params.att_w.transpose() * dquery;

  // question encoder (tanh) and embedding table
  const Eigen::VectorXd dq_pre = dfq.cwiseProduct((1.0 - f.fq.array().square()).matrix());
  grads.q_enc_w += dq_pre * f.emb_mean.transpose();
  grads.q_enc_b += dq_pre;
  const Eigen::VectorXd demb_mean = params.q_enc_w.transpose() * dq_pre;
  const double inv_len = 1.0 / static_cast<double>(f.tokens.size());
  for (int tok : f.tokens) grads.emb.row(tok) += inv_len * demb_mean.transpose();
}

namespace {

json config_to_json(const ModelConfig& c) {
  json j;
  j["d_q"] = c.d_q;
  j["d_v"] = c.d_v;
  j["d_m"] = c.d_m;
  j["d_v_in"] = c.d_v_in;
  j["vocab_size"] = c.vocab_size;
  j["n_answers"] = c.n_answers;
  j["ensemble_mode"] = to_string(c.ensemble_mode);
  j["fusion_mode"] = to_string(c.fusion_mode);
  j["inference_bias"] = to_string(c.inference_bias);
  j["detach_context_encoders"] = c.detach_context_encoders;
  j["init_seed"] = c.init_seed;
  return j;
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.d_q = j.at("d_q").get<int>();
  c.d_v = j.at("d_v").get<int>();
  c.d_m = j.at("d_m").get<int>();
  c.d_v_in = j.at("d_v_in").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.n_answers = j.at("n_answers").get<int>();
  c.ensemble_mode = ensemble_mode_from_string(j.at("ensemble_mode").get<std::string>());
  c.fusion_mode = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
  c.inference_bias = inference_bias_from_string(j.at("inference_bias").get<std::string>());
  c.detach_context_encoders = j.at("detach_context_encoders").get<bool>();
  c.init_seed = j.at("init_seed").get<std::uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "ccb-checkpoint";
  j["config"] = config_to_json(ckpt.config);
  j["rng_state"] = ckpt.rng_state;
  j["loss_mode"] = ckpt.loss_mode;
  j["reweight_r"] = ckpt.reweight_r;
  j["bias_source"] = ckpt.bias_source;
  json tensors;
  auto& params = const_cast<Parameters&>(ckpt.params);
  for (const TensorRef& t : tensor_refs(params))
    tensors[std::string(t.name)] = std::vector<double>(t.data, t.data + t.size);
  j["params"] = tensors;

  std::ofstream out(path);
  if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
  out << j.dump() << '\n';
  if (!out) throw io_error("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw validation_error("cannot open checkpoint file '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw parse_error(std::string("invalid checkpoint JSON: ") + e.what(), 0);
  }
  const int version = j.value("schema_version", -1);
  if (version != kSchemaVersion) throw version_error("ccb-checkpoint", version, kSchemaVersion);
  if (j.value("kind", "") != "ccb-checkpoint")
    throw parse_error("not a ccb-checkpoint file", 0);

  Checkpoint ckpt;
  ckpt.config = config_from_json(j.at("config"));
  ckpt.params = zero_parameters(ckpt.config);
  ckpt.rng_state = j.at("rng_state").get<std::array<std::uint64_t, 4>>();
  ckpt.loss_mode = j.at("loss_mode").get<std::string>();
  ckpt.reweight_r = j.at("reweight_r").get<double>();
  ckpt.bias_source = j.value("bias_source", "");
  const json& tensors = j.at("params");
  for (const TensorRef& t : tensor_refs(ckpt.params)) {
    const auto values = tensors.at(std::string(t.name)).get<std::vector<double>>();
    if (values.size() != static_cast<std::size_t>(t.size))
      throw parse_error("checkpoint tensor '" + std::string(t.name) + "' has wrong size", 0);
    std::copy(values.begin(), values.end(), t.data);
  }
  return ckpt;
}

}  // namespace ccb
