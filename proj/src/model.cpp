#include "fgsam/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <unordered_set>

namespace fgsam::model {
namespace {

Activations forward_impl(const ModelParams& params, const Matrix& features,
                         const PropagationOperator* op, const DropoutOptions& dropout) {
  const Architecture& arch = params.architecture();
  require(features.cols() == arch.input_dim,
          "forward: features have " + std::to_string(features.cols()) +
              " columns, architecture expects " + std::to_string(arch.input_dim));
  require(dropout.rate >= 0.0 && dropout.rate < 1.0, "forward: dropout rate must be in [0,1)");
  if (op) {
    require(op->size() == features.rows(), "forward: operator size " +
                                                std::to_string(op->size()) + " != node count " +
                                                std::to_string(features.rows()));
  }
  const bool propagate = op && !op->is_identity();
  const auto layers = static_cast<std::size_t>(arch.layers);

  Activations acts;
  acts.message_passing = propagate;
  acts.inputs.resize(layers);
  acts.propagated.resize(layers);
  acts.pre.resize(layers);
  acts.dropout_mask.resize(layers);
  acts.inputs[0] = features;

  Rng dropout_rng(dropout.seed);
  std::bernoulli_distribution keep(1.0 - dropout.rate);

  for (int l = 0; l < arch.layers; ++l) {
    const auto li = static_cast<std::size_t>(l);
    const Matrix& h = acts.inputs[li];
    const auto w = params.weight(l);
    Matrix z;
    if (!propagate) {
      z = h * w;
    } else if (arch.layer_in(l) > arch.layer_out(l)) {
      z = op->apply(h * w);
    } else {
      acts.propagated[li] = op->apply(h);
      z = acts.propagated[li] * w;
    }
    z.rowwise() += params.bias(l).transpose();
    if (l + 1 < arch.layers) {
      Matrix post = z.cwiseMax(0.0);
      if (dropout.rate > 0.0) {
        Matrix mask(post.rows(), post.cols());
        const double scale = 1.0 / (1.0 - dropout.rate);
        for (Index j = 0; j < mask.cols(); ++j) {
          for (Index i = 0; i < mask.rows(); ++i) mask(i, j) = keep(dropout_rng) ? scale : 0.0;
        }
        post = post.cwiseProduct(mask);
        acts.dropout_mask[li] = std::move(mask);
      }
      acts.inputs[li + 1] = std::move(post);
    }
    acts.pre[li] = std::move(z);
  }
  acts.logits = acts.pre.back();

  const Matrix& logits = acts.logits;
  acts.probabilities.resize(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const double row_max = logits.row(i).maxCoeff();
    auto e = (logits.row(i).array() - row_max).exp();
    acts.probabilities.row(i) = e / e.sum();
  }
  return acts;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_f64(std::ostream& out, double d) {
  const auto v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_bytes(std::istream& in, int count, const std::string& what) {
  std::uint64_t v = 0;
  for (int i = 0; i < count; ++i) {
    const int c = in.get();
    require(c != std::char_traits<char>::eof(), "checkpoint truncated while reading " + what);
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void Architecture::validate() const {
  require(layers >= 1, "architecture: need at least one layer");
  require(input_dim >= 1, "architecture: input_dim must be positive");
  require(output_dim >= 1, "architecture: output_dim must be positive");
  require(layers == 1 || hidden >= 1, "architecture: hidden width must be positive");
}

Index Architecture::parameter_count() const {
  Index count = 0;
  for (int l = 0; l < layers; ++l) count += layer_in(l) * layer_out(l) + layer_out(l);
  return count;
}

ModelParams::ModelParams(const Architecture& arch)
    : ModelParams(arch, Vector::Zero(arch.parameter_count())) {}

ModelParams::ModelParams(const Architecture& arch, Vector flat) : arch_(arch), flat_(std::move(flat)) {
  arch_.validate();
  require(flat_.size() == arch_.parameter_count(),
          "ModelParams: flat vector has " + std::to_string(flat_.size()) + " entries, expected " +
              std::to_string(arch_.parameter_count()));
}

Index ModelParams::weight_offset(int l) const {
  require(l >= 0 && l < arch_.layers, "ModelParams: layer index out of range");
  Index offset = 0;
  for (int i = 0; i < l; ++i) offset += arch_.layer_in(i) * arch_.layer_out(i) + arch_.layer_out(i);
  return offset;
}

Eigen::Map<const Matrix> ModelParams::weight(int l) const {
  return {flat_.data() + weight_offset(l), arch_.layer_in(l), arch_.layer_out(l)};
}

Eigen::Map<Matrix> ModelParams::weight(int l) {
  return {flat_.data() + weight_offset(l), arch_.layer_in(l), arch_.layer_out(l)};
}

Eigen::Map<const Vector> ModelParams::bias(int l) const {
  return {flat_.data() + weight_offset(l) + arch_.layer_in(l) * arch_.layer_out(l),
          arch_.layer_out(l)};
}

Eigen::Map<Vector> ModelParams::bias(int l) {
  return {flat_.data() + weight_offset(l) + arch_.layer_in(l) * arch_.layer_out(l),
          arch_.layer_out(l)};
}

Vector flatten(const ModelParams& params) { return params.flat(); }

ModelParams unflatten(const Architecture& arch, const Vector& flat) { return {arch, flat}; }

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  ModelParams params(arch);
  Rng rng(seed);
  for (int l = 0; l < arch.layers; ++l) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(arch.layer_in(l) + arch.layer_out(l)));
    std::uniform_real_distribution<double> dist(-limit, limit);
    auto w = params.weight(l);
    for (Index j = 0; j < w.cols(); ++j) {
      for (Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
    }
  }
  return params;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& file) {
  std::ofstream out(file, std::ios::binary);
  require(out.good(), "cannot write checkpoint " + file.string());
  const Architecture& a = params.architecture();
  put_u32(out, static_cast<std::uint32_t>(a.layers));
  put_u32(out, static_cast<std::uint32_t>(a.input_dim));
  put_u32(out, static_cast<std::uint32_t>(a.hidden));
  put_u32(out, static_cast<std::uint32_t>(a.output_dim));
  for (Index i = 0; i < params.flat().size(); ++i) put_f64(out, params.flat()[i]);
}

ModelParams load_checkpoint(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  require(in.good(), "cannot open checkpoint " + file.string());
  Architecture a;
  a.layers = static_cast<std::int32_t>(get_bytes(in, 4, "layers"));
  a.input_dim = static_cast<std::int32_t>(get_bytes(in, 4, "d0"));
  a.hidden = static_cast<std::int32_t>(get_bytes(in, 4, "hidden"));
  a.output_dim = static_cast<std::int32_t>(get_bytes(in, 4, "output"));
  a.validate();
  Vector flat(a.parameter_count());
  for (Index i = 0; i < flat.size(); ++i) {
    flat[i] = std::bit_cast<double>(get_bytes(in, 8, "parameters"));
  }
  require(in.peek() == std::char_traits<char>::eof(), "checkpoint has trailing bytes");
  return {a, std::move(flat)};
}

Activations forward(const ModelParams& params, const Matrix& features,
                    const PropagationOperator& op, const DropoutOptions& dropout) {
  return forward_impl(params, features, &op, dropout);
}

Activations forward(const ModelParams& params, const Graph& graph, const PropagationOperator& op,
                    const DropoutOptions& dropout) {
  return forward_impl(params, graph.features(), &op, dropout);
}

Activations mlp_forward(const ModelParams& params, const Matrix& features,
                        const DropoutOptions& dropout) {
  return forward_impl(params, features, nullptr, dropout);
}

void LossSpec::validate(Index num_nodes, Index num_classes) const {
  require(!nodes.empty(), "loss spec: empty node subset");
  require(nodes.size() == targets.size(), "loss spec: nodes/targets length mismatch");
  require(weight_decay >= 0.0, "loss spec: weight decay must be non-negative");
  std::unordered_set<Index> seen;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    require(nodes[i] >= 0 && nodes[i] < num_nodes,
            "loss spec: node " + std::to_string(nodes[i]) + " out of range");
    require(targets[i] >= 0 && targets[i] < num_classes,
            "loss spec: target " + std::to_string(targets[i]) + " out of range");
    require(seen.insert(nodes[i]).second,
            "loss spec: duplicate node " + std::to_string(nodes[i]));
  }
}

double loss(const Activations& acts, const LossSpec& spec, const ModelParams& params) {
  spec.validate(acts.logits.rows(), acts.logits.cols());
  double total = 0.0;
  for (std::size_t k = 0; k < spec.nodes.size(); ++k) {
    const auto row = acts.logits.row(spec.nodes[k]);
    const double row_max = row.maxCoeff();
    const double lse = row_max + std::log((row.array() - row_max).exp().sum());
    total += lse - row(spec.targets[k]);
  }
  return total / static_cast<double>(spec.nodes.size()) +
         spec.weight_decay * params.flat().squaredNorm();
}

Matrix cross_entropy_logit_grad(const Activations& acts, const LossSpec& spec) {
  spec.validate(acts.logits.rows(), acts.logits.cols());
  Matrix grad = Matrix::Zero(acts.logits.rows(), acts.logits.cols());
  const double scale = 1.0 / static_cast<double>(spec.nodes.size());
  for (std::size_t k = 0; k < spec.nodes.size(); ++k) {
    const Index i = spec.nodes[k];
    grad.row(i) = acts.probabilities.row(i) * scale;
    grad(i, spec.targets[k]) -= scale;
  }
  return grad;
}

Vector backprop(const ModelParams& params, const Activations& acts, const PropagationOperator* op,
                const Matrix& logit_grad) {
  const Architecture& arch = params.architecture();
  require(logit_grad.rows() == acts.logits.rows() && logit_grad.cols() == acts.logits.cols(),
          "backprop: logit gradient shape mismatch");
  const bool propagate = acts.message_passing;
  require(!propagate || (op && !op->is_identity()),
          "backprop: activations used message passing but no operator was given");

  ModelParams grad(arch);
  Matrix g = logit_grad;
  for (int l = arch.layers - 1; l >= 0; --l) {
    const auto li = static_cast<std::size_t>(l);
    const Matrix& h = acts.inputs[li];
    const auto w = params.weight(l);
    grad.bias(l) = g.colwise().sum().transpose();
    Matrix dh;
    if (!propagate) {
      grad.weight(l) = h.transpose() * g;
      if (l > 0) dh = g * w.transpose();
    } else if (acts.propagated[li].size() > 0) {
      grad.weight(l) = acts.propagated[li].transpose() * g;
      if (l > 0) dh = op->apply_transpose(g * w.transpose());
    } else {
      const Matrix s = op->apply_transpose(g);
      grad.weight(l) = h.transpose() * s;
      if (l > 0) dh = s * w.transpose();
    }
    if (l > 0) {
      const Matrix& z = acts.pre[li - 1];
      g = dh.cwiseProduct((z.array() > 0.0).cast<double>().matrix());
      if (acts.dropout_mask[li - 1].size() > 0) g = g.cwiseProduct(acts.dropout_mask[li - 1]);
    }
  }
  return std::move(grad.flat());
}

LossAndGradient loss_and_gradient(const ModelParams& params, const Matrix& features,
                                  const PropagationOperator& op, const LossSpec& spec) {
  const Activations acts = forward(params, features, op);
  LossAndGradient out;
  out.loss = loss(acts, spec, params);
  out.gradient = backprop(params, acts, &op, cross_entropy_logit_grad(acts, spec));
  if (spec.weight_decay != 0.0) out.gradient += 2.0 * spec.weight_decay * params.flat();
  return out;
}

LossAndGradient mlp_loss_and_gradient(const ModelParams& params, const Matrix& features,
                                      const LossSpec& spec) {
  const Activations acts = mlp_forward(params, features);
  LossAndGradient out;
  out.loss = loss(acts, spec, params);
  out.gradient = backprop(params, acts, nullptr, cross_entropy_logit_grad(acts, spec));
  if (spec.weight_decay != 0.0) out.gradient += 2.0 * spec.weight_decay * params.flat();
  return out;
}

Vector backward(const ModelParams& params, const Graph& graph, const PropagationOperator& op,
                const LossSpec& spec) {
  return loss_and_gradient(params, graph.features(), op, spec).gradient;
}

Vector mlp_backward(const ModelParams& params, const Matrix& features, const LossSpec& spec) {
  return mlp_loss_and_gradient(params, features, spec).gradient;
}

Vector perturbed_backward(const ModelParams& params, const Vector& epsilon, const Graph& graph,
                          const PropagationOperator& op, const LossSpec& spec) {
  require(epsilon.size() == params.flat().size(),
          "perturbed_backward: epsilon has " + std::to_string(epsilon.size()) +
              " entries, parameters have " + std::to_string(params.flat().size()));
  const ModelParams shifted(params.architecture(), params.flat() + epsilon);
  return backward(shifted, graph, op, spec);
}

}  // namespace fgsam::model
