#pragma once

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "memfield/encoder.hpp"

namespace memfield::net {

enum class Activation { Identity, ReLU, Sine, Sigmoid };

Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& z,
                                 double sine_omega);
Eigen::MatrixXd activation_grad(Activation act, const Eigen::MatrixXd& z,
                                double sine_omega);

/// One affine layer, dense or factored (w == u * v). Biases stay digital on
/// deployment and are never counted as mapped parameters.
struct Layer {
  bool low_rank = false;
  int in = 0, out = 0, rank = 0;
  Eigen::MatrixXd w;     // out x in
  Eigen::MatrixXd u, v;  // out x rank, rank x in
  Eigen::VectorXd bias;  // out
  Activation act = Activation::Identity;
  double sine_omega = 30.0;

  /// Weight parameter count: out*in dense, rank*(in+out) factored.
  long param_count() const;
  Eigen::MatrixXd effective_weight() const;

  static Layer dense(int in, int out, Activation act, Rng& rng,
                     bool siren_first = false);
  static Layer factored(int in, int out, int rank, Activation act, Rng& rng);
};

/// Coordinate network as a small feed-forward DAG: input groups, affine
/// layers, concatenations (skips), and in-graph encoders (used when gradients
/// must flow into an encoder input, e.g. deformation composition).
class FieldNetwork {
 public:
  struct Node {
    enum class Kind { Input, Affine, Concat, Encode } kind = Kind::Input;
    std::string name;  // input name (Input nodes only)
    int dim = 0;       // output dimension
    int src = -1, src_b = -1;
    Layer layer;                                  // Affine
    std::shared_ptr<const enc::Encoder> encoder;  // Encode
    bool prune_exempt = false;  // output-decoding layers keep their width
  };

  using ValueMap = std::map<std::string, Eigen::MatrixXd>;

  int add_input(const std::string& name, int dim);
  int add_layer(int src, Layer layer);
  int add_concat(int a, int b);
  int add_encoder(int src, std::shared_ptr<const enc::Encoder> encoder);
  void set_head(const std::string& name, int node);

  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Node>& nodes() { return nodes_; }
  const std::map<std::string, int>& heads() const { return heads_; }
  const std::map<std::string, int>& inputs() const { return inputs_; }
  int node_dim(int node) const { return nodes_.at(static_cast<std::size_t>(node)).dim; }

  /// Weight parameters only, closed-form per layer.
  long parameter_count() const;

  /// Batched evaluation; every column of each input is one sample. When
  /// `trace` is given, per-node values and pre-activations are recorded for
  /// the backward pass.
  struct Trace {
    std::vector<Eigen::MatrixXd> value;
    std::vector<Eigen::MatrixXd> preact;  // affine nodes only
    std::vector<Eigen::MatrixXd> inner;   // factored layers: v * input
  };
  ValueMap forward(const ValueMap& in, Trace* trace = nullptr) const;

  /// Per-layer gradients, indexed like nodes (empty for non-affine nodes).
  struct Gradients {
    struct LayerGrad {
      Eigen::MatrixXd w, u, v;
      Eigen::VectorXd bias;
    };
    std::vector<LayerGrad> layers;
  };
  /// Reverse pass from per-head output gradients. Returns gradients w.r.t.
  /// the input groups (needed for composed networks).
  ValueMap backward(const ValueMap& in, const Trace& trace,
                    const ValueMap& head_grads, Gradients* grads) const;

 private:
  void check_node(int node) const;
  std::vector<Node> nodes_;
  std::map<std::string, int> heads_;
  std::map<std::string, int> inputs_;
};

// -- builders ---------------------------------------------------------------

/// input -> dense(width, hidden_act) -> factored(width, rank, hidden_act)
/// -> dense(1, head_act); the CT-style scalar field network.
FieldNetwork make_scalar_field_net(int input_dim, int width, int rank,
                                   Activation hidden_act, Activation head_act,
                                   Rng& rng);

struct NerfNetConfig {
  int pos_dim = 192;    // gamma(x) width
  int view_dim = 24;    // gamma(d) width
  int width = 256;
  int rank = 32;        // interior hidden layers are factored
  int feature_dim = 256;
  int view_width = 256;
  int skip_layer = 5;   // gamma(x) concatenated into this layer's input (1-based)
  int depth = 8;
};

/// Radiance field: trunk of `depth` hidden ReLU layers with a skip, sigma
/// head (ReLU), feature layer, view branch, rgb head (Sigmoid). The two
/// encoder-facing non-square trunk layers stay dense; square interior layers
/// are factored at the given rank.
FieldNetwork make_nerf_net(const NerfNetConfig& cfg, Rng& rng);

/// 4-layer ReLU MLP emitting a 3-component displacement, no output
/// nonlinearity.
FieldNetwork make_deformation_net(int input_dim, int width, Rng& rng);

// -- training ---------------------------------------------------------------

struct TrainConfig {
  int steps = 2000;
  int batch = 0;  // 0 = full batch
  double lr = 1e-4;
  double lr_final = 0.0;  // > 0 enables exponential decay towards this value
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-7;
  std::uint64_t seed = 1;
};

struct Dataset {
  FieldNetwork::ValueMap inputs;   // each d x N, aligned columns
  FieldNetwork::ValueMap targets;  // head name -> h x N
};

struct TrainResult {
  std::vector<double> loss_trace;  // per step, MSE on the step's batch
};

/// Adam on MSE across all supervised heads. Throws NumericError when the
/// loss goes non-finite.
TrainResult train(FieldNetwork& net, const Dataset& data,
                  const TrainConfig& cfg);

/// Adam optimizer state over a set of parameter tensors; exposed so task
/// pipelines with custom losses (rendering) can reuse it.
class AdamState {
 public:
  AdamState(const TrainConfig& cfg) : cfg_(cfg) {}
  void step(std::vector<Eigen::MatrixXd*> params,
            const std::vector<Eigen::MatrixXd>& grads);
  int t() const { return t_; }

 private:
  TrainConfig cfg_;
  int t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

std::vector<Eigen::MatrixXd*> trainable_params(FieldNetwork& net);
std::vector<Eigen::MatrixXd> collect_grads(const FieldNetwork& net,
                                           const FieldNetwork::Gradients& g);

/// Adam over every weight matrix and bias of a network; custom-loss training
/// loops (e.g. through the renderer) drive it with backward() gradients.
class NetOptimizer {
 public:
  NetOptimizer(FieldNetwork& net, const TrainConfig& cfg);
  void step(const FieldNetwork::Gradients& grads);

 private:
  FieldNetwork& net_;
  AdamState adam_;
};

// -- pruning ----------------------------------------------------------------

struct PruneSpec {
  double rate = 0.0;             // fraction of neurons removed
  std::vector<int> schedule;     // training steps at which pruning applies
};

/// Magnitude-based structured pruning: hidden widths shrink to
/// ceil(width*(1-rate)), factored ranks to round(rank*(1-rate)) (min 1).
/// Rows/columns are physically removed; relative neuron order is preserved.
FieldNetwork structured_prune(const FieldNetwork& net, double rate);

// -- checkpoints ------------------------------------------------------------

/// "NFW1" binary: layer table (kind, dims, rank, activation) + f32 payload.
/// The graph topology itself comes from the experiment manifest.
void save_checkpoint(const FieldNetwork& net, const std::string& path);
void load_checkpoint(FieldNetwork& net, const std::string& path);

}  // namespace memfield::net
