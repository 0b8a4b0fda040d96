#pragma once

#include "fgsam/graph.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fgsam::model {

using graph::Graph;
using graph::PropagationOperator;

/// L layers mapping input_dim -> hidden -> ... -> hidden -> output_dim.
struct Architecture {
  int layers = 2;
  Index input_dim = 0;
  Index hidden = 16;
  Index output_dim = 0;

  void validate() const;
  Index layer_in(int l) const { return l == 0 ? input_dim : hidden; }
  Index layer_out(int l) const { return l == layers - 1 ? output_dim : hidden; }
  Index parameter_count() const;
  friend bool operator==(const Architecture&, const Architecture&) = default;
};

/// All weights live in one flat vector in canonical order
/// W1 (column-major), b1, W2, b2, ... ; the per-layer views alias it.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(const Architecture& arch);
  ModelParams(const Architecture& arch, Vector flat);

  const Architecture& architecture() const { return arch_; }
  const Vector& flat() const { return flat_; }
  Vector& flat() { return flat_; }

  Eigen::Map<const Matrix> weight(int l) const;
  Eigen::Map<Matrix> weight(int l);
  Eigen::Map<const Vector> bias(int l) const;
  Eigen::Map<Vector> bias(int l);

 private:
  Index weight_offset(int l) const;

  Architecture arch_;
  Vector flat_;
};

Vector flatten(const ModelParams& params);
ModelParams unflatten(const Architecture& arch, const Vector& flat);

/// Glorot-uniform weights, zero biases.
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

/// Little-endian: int32 L, d0, h, C then the flat vector as float64.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& file);
ModelParams load_checkpoint(const std::filesystem::path& file);

/// Training-only inverted dropout on hidden activations. Off unless rate > 0.
struct DropoutOptions {
  double rate = 0.0;
  std::uint64_t seed = 0;
};

struct Activations {
  std::vector<Matrix> inputs;      // H^(l-1) fed to layer l
  std::vector<Matrix> propagated;  // P H^(l-1), kept only where propagation happens first
  std::vector<Matrix> pre;         // pre-activation of layer l
  std::vector<Matrix> dropout_mask;
  Matrix logits;
  Matrix probabilities;
  bool message_passing = false;
};

/// Layer rule H^(l) = relu(P H^(l-1) W^(l) + b^(l)), no activation on the last
/// layer. With the identity operator P is skipped entirely (PeerMLP).
Activations forward(const ModelParams& params, const Matrix& features,
                    const PropagationOperator& op, const DropoutOptions& dropout = {});
Activations forward(const ModelParams& params, const Graph& graph, const PropagationOperator& op,
                    const DropoutOptions& dropout = {});

/// PeerMLP path: the same layer rule without message passing.
Activations mlp_forward(const ModelParams& params, const Matrix& features,
                        const DropoutOptions& dropout = {});

struct LossSpec {
  std::vector<Index> nodes;
  std::vector<int> targets;  // class id per entry of `nodes`
  double weight_decay = 0.0;

  void validate(Index num_nodes, Index num_classes) const;
};

/// Mean cross-entropy over spec.nodes plus weight_decay * ||w||^2.
double loss(const Activations& acts, const LossSpec& spec, const ModelParams& params);

/// Gradient w.r.t. the flat vector of any scalar whose gradient w.r.t. the
/// logits is `logit_grad`. Weight decay is not included.
Vector backprop(const ModelParams& params, const Activations& acts, const PropagationOperator* op,
                const Matrix& logit_grad);

/// d loss / d logits for the mean cross-entropy of `spec`.
Matrix cross_entropy_logit_grad(const Activations& acts, const LossSpec& spec);

struct LossAndGradient {
  double loss = 0.0;
  Vector gradient;
};

LossAndGradient loss_and_gradient(const ModelParams& params, const Matrix& features,
                                  const PropagationOperator& op, const LossSpec& spec);
LossAndGradient mlp_loss_and_gradient(const ModelParams& params, const Matrix& features,
                                      const LossSpec& spec);

Vector backward(const ModelParams& params, const Graph& graph, const PropagationOperator& op,
                const LossSpec& spec);
Vector mlp_backward(const ModelParams& params, const Matrix& features, const LossSpec& spec);

/// backward at params + epsilon; `params` is not touched.
Vector perturbed_backward(const ModelParams& params, const Vector& epsilon, const Graph& graph,
                          const PropagationOperator& op, const LossSpec& spec);

}  // namespace fgsam::model
