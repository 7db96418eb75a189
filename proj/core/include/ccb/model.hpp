#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ccb/dataset.hpp"

namespace ccb {

/// How the content branch combines base scores with the bias prior.
/// learned_mixin adds softplus(g(h)) * log(b); fixed_log_bias pins the gate
/// at 1.
enum class EnsembleMode { learned_mixin, fixed_log_bias };

/// How the joint prediction combines the two branches. masked multiplies the
/// content scores by sigmoid(context scores); literal multiplies raw scores.
enum class FusionMode { masked, literal };

/// Whether the log-bias term also enters content scores at inference time.
enum class InferenceBias { drop, keep };

const char* to_string(EnsembleMode m);
const char* to_string(FusionMode m);
const char* to_string(InferenceBias m);
EnsembleMode ensemble_mode_from_string(const std::string& s);
FusionMode fusion_mode_from_string(const std::string& s);
InferenceBias inference_bias_from_string(const std::string& s);

struct ModelConfig {
  int d_q = 32;    // question feature dim
  int d_v = 32;    // visual feature dim after projection
  int d_m = 32;    // fused dim
  int d_v_in = 36; // raw region feature dim as emitted by the dataset
  int vocab_size = 64;
  int n_answers = 32;
  EnsembleMode ensemble_mode = EnsembleMode::learned_mixin;
  FusionMode fusion_mode = FusionMode::masked;
  InferenceBias inference_bias = InferenceBias::drop;
  bool detach_context_encoders = false;
  std::uint64_t init_seed = 0;

  void validate() const;

  /// Fills the data-coupled fields (vocab, answers, region dim) from a split.
  static ModelConfig for_split(const Split& split);
};

/// All trainable tensors. Also reused as the gradient accumulator: the
/// gradient of a Parameters-shaped model is itself Parameters-shaped.
struct Parameters {
  Eigen::MatrixXd emb;       // vocab x d_q token embedding table
  Eigen::MatrixXd q_enc_w;   // d_q x d_q question encoder
  Eigen::VectorXd q_enc_b;   // d_q
  Eigen::MatrixXd att_w;     // d_v_in x d_q, question -> region-space attention query
  Eigen::MatrixXd v_proj_w;  // d_v x d_v_in visual projection
  Eigen::VectorXd v_proj_b;  // d_v
  Eigen::MatrixXd fuse_q_w;  // d_m x d_q   fusion core M, question side
  Eigen::VectorXd fuse_q_b;  // d_m
  Eigen::MatrixXd fuse_v_w;  // d_m x d_v   fusion core M, visual side
  Eigen::VectorXd fuse_v_b;  // d_m
  Eigen::MatrixXd cls_w;     // |A| x d_m   classifier C
  Eigen::VectorXd cls_b;     // |A|
  Eigen::VectorXd gate_w;    // d_m         ensemble gate g
  double gate_b = 0.0;
  Eigen::MatrixXd ctx_q_w;   // d_m x d_q   context projection nn_q
  Eigen::VectorXd ctx_q_b;   // d_m
  Eigen::MatrixXd ctx_v_w;   // d_m x d_v   context projection nn_v
  Eigen::VectorXd ctx_v_b;   // d_m
  Eigen::MatrixXd ctx_cls_w; // |A| x d_m   context classifier C_cx
  Eigen::VectorXd ctx_cls_b; // |A|

  bool all_finite() const;
};

/// Flat view over one named tensor, used by the optimizer, checkpoint io and
/// gradient checking. Order is fixed.
struct TensorRef {
  std::string_view name;
  double* data;
  std::ptrdiff_t size;
};

std::vector<TensorRef> tensor_refs(Parameters& p);

/// Xavier-uniform weights in [-a, a], a = sqrt(6 / (fan_in + fan_out)),
/// zero biases; seeded by config.init_seed.
Parameters init_parameters(const ModelConfig& config);

/// Zero tensors with the shapes of `config`.
Parameters zero_parameters(const ModelConfig& config);

/// Raw pre-sigmoid scores of every branch for a batch; one row per instance.
struct BranchOutputs {
  Eigen::MatrixXd z_base;
  Eigen::MatrixXd z_cn;
  Eigen::MatrixXd z_cx;
  Eigen::MatrixXd z_p;
};

/// Everything the backward pass needs from one instance forward.
struct InstanceForward {
  Eigen::VectorXd emb_mean;            // d_q
  Eigen::VectorXd fq;                  // d_q, tanh activated
  Eigen::VectorXd att_query;           // d_v_in
  Eigen::VectorXd att;                 // regions, softmax weights
  Eigen::VectorXd pooled;              // d_v_in
  Eigen::VectorXd fv;                  // d_v, tanh activated
  Eigen::VectorXd fuse_q, fuse_v, h;   // d_m
  Eigen::VectorXd z_base;              // |A|
  double gate_pre = 0.0, gate = 0.0;   // learned_mixin only
  bool bias_applied = false;
  Eigen::VectorXd log_bias;            // |A|, log(clip(b)) when bias_applied
  Eigen::VectorXd z_cn;
  Eigen::VectorXd ctx_q, ctx_v, hc;    // d_m
  Eigen::VectorXd z_cx;
  Eigen::VectorXd z_p;
  // inputs
  Eigen::MatrixXd regions;             // copy of image features
  std::vector<int> tokens;
};

/// --- individual stages -----------------------------------------------------

/// Mean of token embeddings through one tanh layer. Throws validation_error
/// on an empty question or an out-of-vocab token id.
Eigen::VectorXd encode_question(const ModelConfig& config, const Parameters& params,
                                std::span<const int> tokens);

struct ImageEncoding {
  Eigen::VectorXd fv;         // d_v
  Eigen::VectorXd attention;  // non-negative, sums to 1
};

/// Question-conditioned soft attention over regions followed by a tanh
/// projection. Throws validation_error when there are zero regions.
ImageEncoding encode_image(const ModelConfig& config, const Parameters& params,
                           const Eigen::MatrixXd& image_features, const Eigen::VectorXd& fq);

/// Elementwise product of the projected features, then the classifier.
Eigen::VectorXd base_forward(const ModelConfig& config, const Parameters& params,
                             const Eigen::VectorXd& fq, const Eigen::VectorXd& fv);

/// Ensemble of base scores with the bias prior. `h` is the fused hidden
/// vector feeding the learned gate. When inference_bias = drop and
/// training = false this returns z_base unchanged.
Eigen::VectorXd content_forward(const ModelConfig& config, const Parameters& params,
                                const Eigen::VectorXd& z_base, const Eigen::VectorXd& h,
                                const Eigen::VectorXd& bias, bool training);

/// Separate projections nn_q and nn_v, elementwise product, context classifier.
Eigen::VectorXd context_forward(const ModelConfig& config, const Parameters& params,
                                const Eigen::VectorXd& fq, const Eigen::VectorXd& fv);

/// Joint prediction from the two branches.
Eigen::VectorXd joint_predict(const Eigen::VectorXd& z_cn, const Eigen::VectorXd& z_cx,
                              FusionMode mode);

/// --- full pipeline ----------------------------------------------------------

InstanceForward forward_instance(const ModelConfig& config, const Parameters& params,
                                 const Instance& inst, const Eigen::VectorXd& bias,
                                 bool training);

/// Upstream score gradients for one instance; any may be empty (treated as
/// zero). The routing through the fusion product, the ensemble gate and the
/// shared encoders happens inside backward_instance.
struct ScoreGrads {
  Eigen::VectorXd dz_base;  // direct contribution (multi-label baseline loss)
  Eigen::VectorXd dz_cn;
  Eigen::VectorXd dz_cx;
  Eigen::VectorXd dz_p;
};

void backward_instance(const ModelConfig& config, const Parameters& params,
                       const InstanceForward& fwd, const ScoreGrads& upstream,
                       Parameters& grads);

/// --- checkpoint -------------------------------------------------------------

struct Checkpoint {
  ModelConfig config;
  Parameters params;
  std::array<std::uint64_t, 4> rng_state{};
  std::string loss_mode = "ccb";  // echo of the training objective
  double reweight_r = 1.0;        // echo of the content reweight exponent
  std::string bias_source;        // provenance of the bias table used in training
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ccb
