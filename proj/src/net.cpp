#include "memfield/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace memfield::net {

Eigen::MatrixXd apply_activation(Activation act, const Eigen::MatrixXd& z,
                                 double sine_omega) {
  switch (act) {
    case Activation::Identity: return z;
    case Activation::ReLU: return z.cwiseMax(0.0);
    case Activation::Sine: return (sine_omega * z.array()).sin();
    case Activation::Sigmoid:
      return (1.0 / (1.0 + (-z.array()).exp())).matrix();
  }
  return z;
}

Eigen::MatrixXd activation_grad(Activation act, const Eigen::MatrixXd& z,
                                double sine_omega) {
  switch (act) {
    case Activation::Identity:
      return Eigen::MatrixXd::Ones(z.rows(), z.cols());
    case Activation::ReLU:
      return (z.array() > 0.0).cast<double>();
    case Activation::Sine:
      return sine_omega * (sine_omega * z.array()).cos();
    case Activation::Sigmoid: {
      const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
      return (s * (1.0 - s)).matrix();
    }
  }
  return Eigen::MatrixXd::Ones(z.rows(), z.cols());
}

long Layer::param_count() const {
  return low_rank ? static_cast<long>(rank) * (in + out)
                  : static_cast<long>(in) * out;
}

Eigen::MatrixXd Layer::effective_weight() const {
  return low_rank ? Eigen::MatrixXd(u * v) : w;
}

namespace {

Eigen::MatrixXd uniform_matrix(int rows, int cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Eigen::MatrixXd m(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) m(r, c) = u(rng);
  return m;
}

double init_bound(Activation act, int fan_in, int fan_out, double omega,
                  bool siren_first) {
  switch (act) {
    case Activation::Sine:
      // SIREN scheme: first layer 1/fan_in, hidden sqrt(6/fan_in)/omega
      return siren_first ? 1.0 / fan_in
                         : std::sqrt(6.0 / fan_in) / omega;
    case Activation::ReLU:
      return std::sqrt(6.0 / fan_in);
    default:
      return std::sqrt(6.0 / (fan_in + fan_out));
  }
}

}  // namespace

Layer Layer::dense(int in, int out, Activation act, Rng& rng,
                   bool siren_first) {
  if (in < 1 || out < 1) throw ConfigError("layer dims must be positive");
  Layer l;
  l.in = in;
  l.out = out;
  l.act = act;
  l.w = uniform_matrix(out, in, init_bound(act, in, out, l.sine_omega, siren_first), rng);
  l.bias = Eigen::VectorXd::Zero(out);
  return l;
}

Layer Layer::factored(int in, int out, int rank, Activation act, Rng& rng) {
  if (in < 1 || out < 1) throw ConfigError("layer dims must be positive");
  if (rank < 1 || rank > std::min(in, out))
    throw ConfigError("rank must be in 1..min(in, out)");
  Layer l;
  l.low_rank = true;
  l.in = in;
  l.out = out;
  l.rank = rank;
  // v carries the fan-in scaling; u is scaled so u*v matches the dense
  // initialization variance of the target activation.
  const double vb = std::sqrt(6.0 / in);
  double ub = std::sqrt(3.0 / rank);
  if (act == Activation::Sine) ub /= l.sine_omega;
  l.v = uniform_matrix(rank, in, vb, rng);
  l.u = uniform_matrix(out, rank, ub, rng);
  l.bias = Eigen::VectorXd::Zero(out);
  return l;
}

void FieldNetwork::check_node(int node) const {
  if (node < 0 || node >= static_cast<int>(nodes_.size()))
    throw ConfigError("node index out of range");
}

int FieldNetwork::add_input(const std::string& name, int dim) {
  if (dim < 1) throw ConfigError("input dim must be positive");
  Node n;
  n.kind = Node::Kind::Input;
  n.name = name;
  n.dim = dim;
  nodes_.push_back(std::move(n));
  inputs_[name] = static_cast<int>(nodes_.size()) - 1;
  return static_cast<int>(nodes_.size()) - 1;
}

int FieldNetwork::add_layer(int src, Layer layer) {
  check_node(src);
  if (nodes_[static_cast<std::size_t>(src)].dim != layer.in)
    throw ConfigError("layer input width does not match source node");
  Node n;
  n.kind = Node::Kind::Affine;
  n.src = src;
  n.dim = layer.out;
  n.layer = std::move(layer);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int FieldNetwork::add_concat(int a, int b) {
  check_node(a);
  check_node(b);
  Node n;
  n.kind = Node::Kind::Concat;
  n.src = a;
  n.src_b = b;
  n.dim = nodes_[static_cast<std::size_t>(a)].dim + nodes_[static_cast<std::size_t>(b)].dim;
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int FieldNetwork::add_encoder(int src, std::shared_ptr<const enc::Encoder> encoder) {
  check_node(src);
  if (!encoder) throw ConfigError("null encoder");
  if (nodes_[static_cast<std::size_t>(src)].dim != encoder->config().input_dim)
    throw ConfigError("encoder input width does not match source node");
  Node n;
  n.kind = Node::Kind::Encode;
  n.src = src;
  n.dim = encoder->output_dim();
  n.encoder = std::move(encoder);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

void FieldNetwork::set_head(const std::string& name, int node) {
  check_node(node);
  heads_[name] = node;
}

long FieldNetwork::parameter_count() const {
  long total = 0;
  for (const auto& n : nodes_)
    if (n.kind == Node::Kind::Affine) total += n.layer.param_count();
  return total;
}

FieldNetwork::ValueMap FieldNetwork::forward(const ValueMap& in,
                                             Trace* trace) const {
  std::vector<Eigen::MatrixXd> value(nodes_.size());
  std::vector<Eigen::MatrixXd> preact(nodes_.size());
  std::vector<Eigen::MatrixXd> inner(nodes_.size());

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    switch (n.kind) {
      case Node::Kind::Input: {
        auto it = in.find(n.name);
        if (it == in.end()) throw ConfigError("missing input group: " + n.name);
        if (it->second.rows() != n.dim)
          throw ConfigError("input group dimension mismatch: " + n.name);
        value[i] = it->second;
        break;
      }
      case Node::Kind::Affine: {
        const auto& a = value[static_cast<std::size_t>(n.src)];
        Eigen::MatrixXd z;
        if (n.layer.low_rank) {
          inner[i] = n.layer.v * a;
          z = n.layer.u * inner[i];
        } else {
          z = n.layer.w * a;
        }
        z.colwise() += n.layer.bias;
        preact[i] = z;
        value[i] = apply_activation(n.layer.act, z, n.layer.sine_omega);
        break;
      }
      case Node::Kind::Concat: {
        const auto& a = value[static_cast<std::size_t>(n.src)];
        const auto& b = value[static_cast<std::size_t>(n.src_b)];
        Eigen::MatrixXd m(a.rows() + b.rows(), a.cols());
        m.topRows(a.rows()) = a;
        m.bottomRows(b.rows()) = b;
        value[i] = std::move(m);
        break;
      }
      case Node::Kind::Encode: {
        value[i] = n.encoder->encode_batch(value[static_cast<std::size_t>(n.src)]);
        break;
      }
    }
  }

  ValueMap out;
  for (const auto& [name, node] : heads_) out[name] = value[static_cast<std::size_t>(node)];
  if (trace) {
    trace->value = std::move(value);
    trace->preact = std::move(preact);
    trace->inner = std::move(inner);
  }
  return out;
}

FieldNetwork::ValueMap FieldNetwork::backward(const ValueMap& in,
                                              const Trace& trace,
                                              const ValueMap& head_grads,
                                              Gradients* grads) const {
  (void)in;
  if (trace.value.size() != nodes_.size())
    throw ConfigError("trace does not match network");
  const Eigen::Index batch = trace.value.empty() ? 0 : trace.value.front().cols();

  std::vector<Eigen::MatrixXd> gvalue(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i)
    gvalue[i] = Eigen::MatrixXd::Zero(nodes_[i].dim, batch);

  for (const auto& [name, g] : head_grads) {
    auto it = heads_.find(name);
    if (it == heads_.end()) throw ConfigError("unknown head: " + name);
    gvalue[static_cast<std::size_t>(it->second)] += g;
  }

  if (grads) grads->layers.assign(nodes_.size(), {});

  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const auto ui = static_cast<std::size_t>(i);
    switch (n.kind) {
      case Node::Kind::Input:
        break;
      case Node::Kind::Affine: {
        const Eigen::MatrixXd gz =
            gvalue[ui].cwiseProduct(activation_grad(n.layer.act, trace.preact[ui],
                                                    n.layer.sine_omega));
        const auto& a = trace.value[static_cast<std::size_t>(n.src)];
        if (grads) {
          auto& lg = grads->layers[ui];
          if (n.layer.low_rank) {
            lg.u = gz * trace.inner[ui].transpose();
            lg.v = (n.layer.u.transpose() * gz) * a.transpose();
          } else {
            lg.w = gz * a.transpose();
          }
          lg.bias = gz.rowwise().sum();
        }
        if (n.layer.low_rank)
          gvalue[static_cast<std::size_t>(n.src)] +=
              n.layer.v.transpose() * (n.layer.u.transpose() * gz);
        else
          gvalue[static_cast<std::size_t>(n.src)] += n.layer.w.transpose() * gz;
        break;
      }
      case Node::Kind::Concat: {
        const int da = nodes_[static_cast<std::size_t>(n.src)].dim;
        const int db = nodes_[static_cast<std::size_t>(n.src_b)].dim;
        gvalue[static_cast<std::size_t>(n.src)] += gvalue[ui].topRows(da);
        gvalue[static_cast<std::size_t>(n.src_b)] += gvalue[ui].bottomRows(db);
        break;
      }
      case Node::Kind::Encode: {
        const auto& x = trace.value[static_cast<std::size_t>(n.src)];
        auto& gx = gvalue[static_cast<std::size_t>(n.src)];
        std::vector<double> col(static_cast<std::size_t>(x.rows()));
        for (Eigen::Index k = 0; k < x.cols(); ++k) {
          Eigen::Map<Eigen::VectorXd>(col.data(), x.rows()) = x.col(k);
          const Eigen::MatrixXd jac = n.encoder->input_jacobian(col);
          gx.col(k) += jac.transpose() * gvalue[ui].col(k);
        }
        break;
      }
    }
  }

  ValueMap input_grads;
  for (const auto& [name, node] : inputs_)
    input_grads[name] = gvalue[static_cast<std::size_t>(node)];
  return input_grads;
}

FieldNetwork make_scalar_field_net(int input_dim, int width, int rank,
                                   Activation hidden_act, Activation head_act,
                                   Rng& rng) {
  FieldNetwork net;
  const int in = net.add_input("features", input_dim);
  const bool siren = hidden_act == Activation::Sine;
  const int h1 = net.add_layer(in, Layer::dense(input_dim, width, hidden_act, rng, siren));
  const int h2 = net.add_layer(h1, Layer::factored(width, width, rank, hidden_act, rng));
  const int out = net.add_layer(h2, Layer::dense(width, 1, head_act, rng));
  net.set_head("value", out);
  return net;
}

FieldNetwork make_nerf_net(const NerfNetConfig& cfg, Rng& rng) {
  if (cfg.depth < 2 || cfg.skip_layer < 2 || cfg.skip_layer > cfg.depth)
    throw ConfigError("nerf trunk needs depth >= 2 and an interior skip");
  FieldNetwork net;
  const int pos = net.add_input("position", cfg.pos_dim);
  const int view = net.add_input("view", cfg.view_dim);

  // trunk; the layers that receive encoder features stay dense
  int cur = net.add_layer(pos, Layer::dense(cfg.pos_dim, cfg.width, Activation::ReLU, rng));
  for (int d = 2; d <= cfg.depth; ++d) {
    if (d == cfg.skip_layer) {
      const int cat = net.add_concat(cur, pos);
      cur = net.add_layer(cat, Layer::dense(cfg.width + cfg.pos_dim, cfg.width,
                                            Activation::ReLU, rng));
    } else {
      cur = net.add_layer(cur, Layer::factored(cfg.width, cfg.width, cfg.rank,
                                               Activation::ReLU, rng));
    }
  }

  const int sigma = net.add_layer(cur, Layer::dense(cfg.width, 1, Activation::ReLU, rng));
  net.set_head("sigma", sigma);

  // decode branch: widths are part of the output contract, not pruned
  const int feature =
      net.add_layer(cur, Layer::dense(cfg.width, cfg.feature_dim, Activation::Identity, rng));
  net.nodes()[static_cast<std::size_t>(feature)].prune_exempt = true;
  const int cat = net.add_concat(feature, view);
  const int vb = net.add_layer(cat, Layer::dense(cfg.feature_dim + cfg.view_dim,
                                                 cfg.view_width, Activation::ReLU, rng));
  net.nodes()[static_cast<std::size_t>(vb)].prune_exempt = true;
  const int rgb = net.add_layer(vb, Layer::dense(cfg.view_width, 3, Activation::Sigmoid, rng));
  net.set_head("color", rgb);
  return net;
}

FieldNetwork make_deformation_net(int input_dim, int width, Rng& rng) {
  FieldNetwork net;
  int cur = net.add_input("features", input_dim);
  cur = net.add_layer(cur, Layer::dense(input_dim, width, Activation::ReLU, rng));
  cur = net.add_layer(cur, Layer::dense(width, width, Activation::ReLU, rng));
  cur = net.add_layer(cur, Layer::dense(width, width, Activation::ReLU, rng));
  cur = net.add_layer(cur, Layer::dense(width, 3, Activation::Identity, rng));
  net.set_head("delta", cur);
  return net;
}

std::vector<Eigen::MatrixXd*> trainable_params(FieldNetwork& net) {
  std::vector<Eigen::MatrixXd*> params;
  for (auto& n : net.nodes()) {
    if (n.kind != FieldNetwork::Node::Kind::Affine) continue;
    if (n.layer.low_rank) {
      params.push_back(&n.layer.u);
      params.push_back(&n.layer.v);
    } else {
      params.push_back(&n.layer.w);
    }
  }
  return params;
}

namespace {

// bias vectors are adapted through a matrix view to share the Adam machinery
std::vector<Eigen::Map<Eigen::MatrixXd>> bias_views(FieldNetwork& net) {
  std::vector<Eigen::Map<Eigen::MatrixXd>> views;
  for (auto& n : net.nodes())
    if (n.kind == FieldNetwork::Node::Kind::Affine)
      views.emplace_back(n.layer.bias.data(), n.layer.bias.size(), 1);
  return views;
}

}  // namespace

std::vector<Eigen::MatrixXd> collect_grads(const FieldNetwork& net,
                                           const FieldNetwork::Gradients& g) {
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t i = 0; i < net.nodes().size(); ++i) {
    const auto& n = net.nodes()[i];
    if (n.kind != FieldNetwork::Node::Kind::Affine) continue;
    if (n.layer.low_rank) {
      out.push_back(g.layers[i].u);
      out.push_back(g.layers[i].v);
    } else {
      out.push_back(g.layers[i].w);
    }
  }
  for (std::size_t i = 0; i < net.nodes().size(); ++i) {
    const auto& n = net.nodes()[i];
    if (n.kind != FieldNetwork::Node::Kind::Affine) continue;
    out.push_back(g.layers[i].bias);
  }
  return out;
}

void AdamState::step(std::vector<Eigen::MatrixXd*> params,
                     const std::vector<Eigen::MatrixXd>& grads) {
  if (params.size() != grads.size())
    throw ConfigError("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = Eigen::MatrixXd::Zero(params[i]->rows(), params[i]->cols());
      v_[i] = Eigen::MatrixXd::Zero(params[i]->rows(), params[i]->cols());
    }
  }
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double bc1 = 1.0 - std::pow(b1, t_);
  const double bc2 = 1.0 - std::pow(b2, t_);
  double lr = cfg_.lr;
  if (cfg_.lr_final > 0 && cfg_.steps > 1)
    lr = cfg_.lr * std::pow(cfg_.lr_final / cfg_.lr,
                            static_cast<double>(t_ - 1) / (cfg_.steps - 1));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = b1 * m_[i] + (1 - b1) * grads[i];
    v_[i] = (b2 * v_[i].array() + (1 - b2) * grads[i].array().square()).matrix();
    params[i]->array() -=
        lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
  }
}

NetOptimizer::NetOptimizer(FieldNetwork& net, const TrainConfig& cfg)
    : net_(net), adam_(cfg) {}

void NetOptimizer::step(const FieldNetwork::Gradients& grads) {
  auto params = trainable_params(net_);
  auto biases = bias_views(net_);
  auto grad_list = collect_grads(net_, grads);

  // weights first, then biases, matching collect_grads order
  std::vector<Eigen::MatrixXd> bias_storage;
  bias_storage.reserve(biases.size());
  for (auto& b : biases) bias_storage.emplace_back(b);
  std::vector<Eigen::MatrixXd*> step_params = params;
  for (auto& b : bias_storage) step_params.push_back(&b);

  adam_.step(step_params, grad_list);

  std::size_t bi = 0;
  for (auto& n : net_.nodes())
    if (n.kind == FieldNetwork::Node::Kind::Affine)
      n.layer.bias = bias_storage[bi++].col(0);
}

TrainResult train(FieldNetwork& net, const Dataset& data,
                  const TrainConfig& cfg) {
  if (data.inputs.empty() || data.targets.empty())
    throw ConfigError("training data must have inputs and targets");
  const Eigen::Index n_samples = data.inputs.begin()->second.cols();
  if (n_samples == 0) throw ConfigError("empty dataset");
  if (cfg.lr <= 0) throw ConfigError("learning rate must be positive");

  NetOptimizer optimizer(net, cfg);
  TrainResult result;
  Rng rng = make_rng(cfg.seed, 7);

  const int batch = (cfg.batch <= 0 || cfg.batch >= n_samples)
                        ? static_cast<int>(n_samples)
                        : cfg.batch;
  std::uniform_int_distribution<Eigen::Index> pick(0, n_samples - 1);

  for (int step = 0; step < cfg.steps; ++step) {
    FieldNetwork::ValueMap in, tgt;
    if (batch == n_samples) {
      in = data.inputs;
      tgt = data.targets;
    } else {
      std::vector<Eigen::Index> idx(static_cast<std::size_t>(batch));
      for (auto& v : idx) v = pick(rng);
      for (const auto& [name, m] : data.inputs) {
        Eigen::MatrixXd sel(m.rows(), batch);
        for (int k = 0; k < batch; ++k) sel.col(k) = m.col(idx[static_cast<std::size_t>(k)]);
        in[name] = std::move(sel);
      }
      for (const auto& [name, m] : data.targets) {
        Eigen::MatrixXd sel(m.rows(), batch);
        for (int k = 0; k < batch; ++k) sel.col(k) = m.col(idx[static_cast<std::size_t>(k)]);
        tgt[name] = std::move(sel);
      }
    }

    FieldNetwork::Trace trace;
    auto pred = net.forward(in, &trace);

    double loss = 0.0;
    long count = 0;
    FieldNetwork::ValueMap head_grads;
    for (const auto& [name, target] : tgt) {
      auto it = pred.find(name);
      if (it == pred.end()) throw ConfigError("no head for target: " + name);
      const Eigen::MatrixXd diff = it->second - target;
      loss += diff.squaredNorm();
      count += diff.size();
      head_grads[name] = diff;  // scaled below
    }
    loss /= static_cast<double>(count);
    if (!std::isfinite(loss))
      throw NumericError("training diverged: non-finite loss at step " +
                         std::to_string(step));
    result.loss_trace.push_back(loss);
    for (auto& [name, g] : head_grads) g *= 2.0 / static_cast<double>(count);

    FieldNetwork::Gradients grads;
    net.backward(in, trace, head_grads, &grads);
    optimizer.step(grads);
  }
  return result;
}

FieldNetwork structured_prune(const FieldNetwork& net, double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw ConfigError("prune rate must be in [0, 1)");
  const auto& nodes = net.nodes();
  const int n_nodes = static_cast<int>(nodes.size());

  // a node is prunable when no head reads it, no encoder consumes it, and it
  // is not marked exempt (output-decoding layers)
  std::vector<bool> prunable(static_cast<std::size_t>(n_nodes), true);
  for (const auto& [name, idx] : net.heads()) prunable[static_cast<std::size_t>(idx)] = false;
  for (int i = 0; i < n_nodes; ++i)
    if (nodes[static_cast<std::size_t>(i)].prune_exempt) prunable[static_cast<std::size_t>(i)] = false;
  for (const auto& n : nodes)
    if (n.kind == FieldNetwork::Node::Kind::Encode)
      prunable[static_cast<std::size_t>(n.src)] = false;

  // kept output indices per node, in original index space
  std::vector<std::vector<int>> kept(static_cast<std::size_t>(n_nodes));
  auto all_of = [](int d) {
    std::vector<int> v(static_cast<std::size_t>(d));
    std::iota(v.begin(), v.end(), 0);
    return v;
  };

  FieldNetwork out;
  std::vector<int> remap(static_cast<std::size_t>(n_nodes), -1);

  for (int i = 0; i < n_nodes; ++i) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    const auto ui = static_cast<std::size_t>(i);
    switch (n.kind) {
      case FieldNetwork::Node::Kind::Input: {
        kept[ui] = all_of(n.dim);
        remap[ui] = out.add_input(n.name, n.dim);
        break;
      }
      case FieldNetwork::Node::Kind::Encode: {
        kept[ui] = all_of(n.dim);
        remap[ui] = out.add_encoder(remap[static_cast<std::size_t>(n.src)], n.encoder);
        break;
      }
      case FieldNetwork::Node::Kind::Concat: {
        const auto& ka = kept[static_cast<std::size_t>(n.src)];
        const auto& kb = kept[static_cast<std::size_t>(n.src_b)];
        std::vector<int> k = ka;
        const int da = nodes[static_cast<std::size_t>(n.src)].dim;
        for (int v : kb) k.push_back(da + v);
        kept[ui] = std::move(k);
        remap[ui] = out.add_concat(remap[static_cast<std::size_t>(n.src)],
                                   remap[static_cast<std::size_t>(n.src_b)]);
        break;
      }
      case FieldNetwork::Node::Kind::Affine: {
        const auto& src_keep = kept[static_cast<std::size_t>(n.src)];
        const Layer& orig = n.layer;

        // All keep decisions are scored on the original trained weights;
        // removals across the network are applied simultaneously.
        std::vector<int> keep_rows = all_of(orig.out);
        std::vector<int> keep_rank = orig.low_rank ? all_of(orig.rank)
                                                   : std::vector<int>{};
        if (prunable[ui] && rate > 0.0) {
          const Eigen::MatrixXd eff = orig.effective_weight();
          std::vector<std::pair<double, int>> scored;
          scored.reserve(static_cast<std::size_t>(orig.out));
          for (int r = 0; r < orig.out; ++r)
            scored.emplace_back(eff.row(r).norm(), r);
          const int target =
              std::max(1, static_cast<int>(std::ceil(orig.out * (1.0 - rate))));
          std::sort(scored.begin(), scored.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
          keep_rows.assign(static_cast<std::size_t>(target), 0);
          for (int k = 0; k < target; ++k)
            keep_rows[static_cast<std::size_t>(k)] = scored[static_cast<std::size_t>(k)].second;
          std::sort(keep_rows.begin(), keep_rows.end());

          if (orig.low_rank) {
            const int rank_target = std::max(
                1, static_cast<int>(std::llround(orig.rank * (1.0 - rate))));
            if (rank_target < orig.rank) {
              std::vector<std::pair<double, int>> rs;
              for (int k = 0; k < orig.rank; ++k)
                rs.emplace_back(std::sqrt(orig.u.col(k).squaredNorm() +
                                          orig.v.row(k).squaredNorm()),
                                k);
              std::sort(rs.begin(), rs.end(),
                        [](const auto& a, const auto& b) { return a.first > b.first; });
              keep_rank.assign(static_cast<std::size_t>(rank_target), 0);
              for (int k = 0; k < rank_target; ++k)
                keep_rank[static_cast<std::size_t>(k)] = rs[static_cast<std::size_t>(k)].second;
              std::sort(keep_rank.begin(), keep_rank.end());
            }
          }
        }

        Layer l;
        l.low_rank = orig.low_rank;
        l.act = orig.act;
        l.sine_omega = orig.sine_omega;
        l.in = static_cast<int>(src_keep.size());
        l.out = static_cast<int>(keep_rows.size());
        l.bias.resize(l.out);
        for (int r = 0; r < l.out; ++r)
          l.bias[r] = orig.bias[keep_rows[static_cast<std::size_t>(r)]];
        if (orig.low_rank) {
          l.rank = static_cast<int>(keep_rank.size());
          l.u.resize(l.out, l.rank);
          l.v.resize(l.rank, l.in);
          for (int r = 0; r < l.out; ++r)
            for (int k = 0; k < l.rank; ++k)
              l.u(r, k) = orig.u(keep_rows[static_cast<std::size_t>(r)],
                                 keep_rank[static_cast<std::size_t>(k)]);
          for (int k = 0; k < l.rank; ++k)
            for (int c = 0; c < l.in; ++c)
              l.v(k, c) = orig.v(keep_rank[static_cast<std::size_t>(k)],
                                 src_keep[static_cast<std::size_t>(c)]);
        } else {
          l.w.resize(l.out, l.in);
          for (int r = 0; r < l.out; ++r)
            for (int c = 0; c < l.in; ++c)
              l.w(r, c) = orig.w(keep_rows[static_cast<std::size_t>(r)],
                                 src_keep[static_cast<std::size_t>(c)]);
        }

        kept[ui] = keep_rows;
        remap[ui] = out.add_layer(remap[static_cast<std::size_t>(n.src)], std::move(l));
        break;
      }
    }
  }

  for (int i = 0; i < n_nodes; ++i)
    out.nodes()[static_cast<std::size_t>(remap[static_cast<std::size_t>(i)])].prune_exempt =
        nodes[static_cast<std::size_t>(i)].prune_exempt;
  for (const auto& [name, idx] : net.heads())
    out.set_head(name, remap[static_cast<std::size_t>(idx)]);
  return out;
}

namespace {

constexpr char kCkptMagic[4] = {'N', 'F', 'W', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_matrix_f32(std::ostream& os, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float f = static_cast<float>(m(r, c));
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      write_u32(os, u);
    }
}

template <typename Mat>
void read_matrix_f32(std::istream& is, Mat& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const std::uint32_t u = read_u32(is);
      float f;
      std::memcpy(&f, &u, 4);
      m(r, c) = f;
    }
}

}  // namespace

void save_checkpoint(const FieldNetwork& net, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path);
  os.write(kCkptMagic, 4);
  std::uint32_t layers = 0;
  for (const auto& n : net.nodes())
    if (n.kind == FieldNetwork::Node::Kind::Affine) ++layers;
  write_u32(os, layers);
  for (const auto& n : net.nodes()) {
    if (n.kind != FieldNetwork::Node::Kind::Affine) continue;
    const auto& l = n.layer;
    write_u32(os, l.low_rank ? 1u : 0u);
    write_u32(os, static_cast<std::uint32_t>(l.in));
    write_u32(os, static_cast<std::uint32_t>(l.out));
    write_u32(os, static_cast<std::uint32_t>(l.rank));
    write_u32(os, static_cast<std::uint32_t>(l.act));
    const float omega = static_cast<float>(l.sine_omega);
    std::uint32_t uo;
    std::memcpy(&uo, &omega, 4);
    write_u32(os, uo);
    if (l.low_rank) {
      write_matrix_f32(os, l.u);
      write_matrix_f32(os, l.v);
    } else {
      write_matrix_f32(os, l.w);
    }
    write_matrix_f32(os, l.bias);
  }
  if (!os) throw DataError("checkpoint write failed: " + path);
}

void load_checkpoint(FieldNetwork& net, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kCkptMagic, 4) != 0)
    throw DataError("bad checkpoint magic in " + path);
  const std::uint32_t layers = read_u32(is);
  std::uint32_t seen = 0;
  for (auto& n : net.nodes()) {
    if (n.kind != FieldNetwork::Node::Kind::Affine) continue;
    if (seen == layers) throw DataError("checkpoint has fewer layers than network");
    auto& l = n.layer;
    const bool low_rank = read_u32(is) == 1u;
    const int in = static_cast<int>(read_u32(is));
    const int out = static_cast<int>(read_u32(is));
    const int rank = static_cast<int>(read_u32(is));
    const auto act = static_cast<Activation>(read_u32(is));
    const std::uint32_t uo = read_u32(is);
    float omega;
    std::memcpy(&omega, &uo, 4);
    if (low_rank != l.low_rank || in != l.in || out != l.out ||
        (low_rank && rank != l.rank))
      throw DataError("checkpoint layer shape mismatch in " + path);
    l.act = act;
    l.sine_omega = omega;
    if (l.low_rank) {
      read_matrix_f32(is, l.u);
      read_matrix_f32(is, l.v);
    } else {
      read_matrix_f32(is, l.w);
    }
    read_matrix_f32(is, l.bias);
    ++seen;
  }
  if (seen != layers) throw DataError("checkpoint has more layers than network");
  if (!is) throw DataError("checkpoint truncated: " + path);
}

}  // namespace memfield::net
