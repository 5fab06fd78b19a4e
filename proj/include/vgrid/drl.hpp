#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vgrid/action.hpp"
#include "vgrid/errors.hpp"
#include "vgrid/rng.hpp"

namespace vgrid {

/// Slow-timescale MDP state: per-bus mean net active injection over the
/// elapsed interval concatenated with the capacitor commitment in effect.
struct MdpState {
  Eigen::VectorXd p_bar;
  std::vector<std::uint8_t> y_hat;

  Eigen::VectorXd to_input() const {
    Eigen::VectorXd s(p_bar.size() + static_cast<Eigen::Index>(y_hat.size()));
    s.head(p_bar.size()) = p_bar;
    for (size_t k = 0; k < y_hat.size(); ++k)
      s[p_bar.size() + static_cast<Eigen::Index>(k)] = y_hat[k] ? 1.0 : 0.0;
    return s;
  }
};

struct Experience {
  MdpState s_prev;
  Action a;
  double cost = 0.0;
  MdpState s_next;
};

/// Ring of the R most recent experiences with uniform-with-replacement
/// sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw ValidationError("replay buffer: capacity 0");
  }

  void push(Experience e) {
    if (!std::isfinite(e.cost))
      throw ValidationError("replay buffer: non-finite cost");
    if (items_.size() < capacity_) {
      items_.push_back(std::move(e));
    } else {
      items_[cursor_] = std::move(e);
    }
    cursor_ = (cursor_ + 1) % capacity_;
  }

  size_t size() const { return items_.size(); }
  size_t capacity() const { return capacity_; }

  /// i = 0 is the oldest retained experience.
  const Experience& oldest_first(size_t i) const {
    if (items_.size() < capacity_) return items_[i];
    return items_[(cursor_ + i) % capacity_];
  }

  std::vector<const Experience*> sample(size_t m, std::mt19937_64& gen) const {
    if (items_.empty()) throw ValidationError("replay buffer: empty");
    std::vector<const Experience*> out(m);
    for (size_t i = 0; i < m; ++i)
      out[i] = &items_[uniform_below(gen, items_.size())];
    return out;
  }

 private:
  size_t capacity_;
  size_t cursor_ = 0;
  std::vector<Experience> items_;
};

namespace detail {
inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}
}  // namespace detail

struct NetGradients {
  std::vector<Eigen::MatrixXd> dW;
  std::vector<Eigen::VectorXd> db;
};

/// One training sample for the temporal-difference loss: the gradient flows
/// only through the output entry of the taken action; the target is a
/// constant.
struct TdSample {
  Eigen::VectorXd input;
  int action = 0;
  double target = 0.0;
};

/// Fully connected feed-forward Q-value approximator: ReLU hidden layers,
/// logistic sigmoid output scaled by output_scale, plus a structurally
/// identical target copy that changes only on sync_target(). Weights are
/// Glorot-uniform at construction, biases zero.
class QNetwork {
 public:
  QNetwork(std::vector<int> layer_sizes, double output_scale,
           std::uint64_t seed)
      : sizes_(std::move(layer_sizes)), output_scale_(output_scale) {
    if (sizes_.size() < 2)
      throw ValidationError("qnetwork: need input and output layers");
    for (int s : sizes_)
      if (s < 1) throw ValidationError("qnetwork: empty layer");
    if (!(output_scale_ > 0.0))
      throw ValidationError("qnetwork: output scale must be positive");
    std::mt19937_64 gen(seed);
    for (size_t l = 1; l < sizes_.size(); ++l) {
      const int fan_in = sizes_[l - 1], fan_out = sizes_[l];
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      Eigen::MatrixXd w(fan_out, fan_in);
      for (int r = 0; r < fan_out; ++r)
        for (int c = 0; c < fan_in; ++c)
          w(r, c) = (2.0 * uniform01(gen) - 1.0) * bound;
      W_.push_back(w);
      b_.push_back(Eigen::VectorXd::Zero(fan_out));
    }
    Wt_ = W_;
    bt_ = b_;
  }

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }
  const std::vector<int>& layer_sizes() const { return sizes_; }
  double output_scale() const { return output_scale_; }
  int n_layers() const { return static_cast<int>(W_.size()); }
  const Eigen::MatrixXd& weights(int l) const { return W_[l]; }
  const Eigen::VectorXd& biases(int l) const { return b_[l]; }
  const Eigen::MatrixXd& target_weights(int l) const { return Wt_[l]; }
  const Eigen::VectorXd& target_biases(int l) const { return bt_[l]; }

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const {
    return eval(W_, b_, input);
  }
  Eigen::VectorXd forward_target(const Eigen::VectorXd& input) const {
    return eval(Wt_, bt_, input);
  }

  void sync_target() {
    Wt_ = W_;
    bt_ = b_;
  }

  /// Mini-batch temporal-difference loss (1/2M) sum (target - Q_sel)^2 and
  /// its gradient in the online parameters.
  std::pair<double, NetGradients> loss_and_gradients(
      const std::vector<TdSample>& batch) const {
    if (batch.empty()) throw ValidationError("qnetwork: empty batch");
    const size_t L = W_.size();
    NetGradients g;
    g.dW.resize(L);
    g.db.resize(L);
    for (size_t l = 0; l < L; ++l) {
      g.dW[l] = Eigen::MatrixXd::Zero(W_[l].rows(), W_[l].cols());
      g.db[l] = Eigen::VectorXd::Zero(b_[l].size());
    }
    const double inv_m = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;

    std::vector<Eigen::VectorXd> acts(L + 1), pre(L);
    for (const TdSample& s : batch) {
      if (s.input.size() != sizes_.front())
        throw ValidationError("qnetwork: input dimension mismatch");
      if (s.action < 0 || s.action >= sizes_.back())
        throw ValidationError("qnetwork: action index out of range");
      acts[0] = s.input;
      for (size_t l = 0; l < L; ++l) {
        pre[l] = W_[l] * acts[l] + b_[l];
        if (l + 1 < L)
          acts[l + 1] = pre[l].cwiseMax(0.0);
        else {
          acts[l + 1] = pre[l];
          for (Eigen::Index i = 0; i < pre[l].size(); ++i)
            acts[l + 1][i] = output_scale_ * detail::sigmoid(pre[l][i]);
        }
      }
      const double q = acts[L][s.action];
      const double err = q - s.target;
      loss += 0.5 * inv_m * err * err;

      // Output layer: only the taken action's entry carries gradient.
      Eigen::VectorXd delta = Eigen::VectorXd::Zero(sizes_.back());
      const double sig = detail::sigmoid(pre[L - 1][s.action]);
      delta[s.action] = err * inv_m * output_scale_ * sig * (1.0 - sig);
      for (size_t l = L; l-- > 0;) {
        g.dW[l] += delta * acts[l].transpose();
        g.db[l] += delta;
        if (l > 0) {
          Eigen::VectorXd back = W_[l].transpose() * delta;
          delta = (pre[l - 1].array() > 0.0)
                      .select(back.array(), 0.0)
                      .matrix();
        }
      }
    }
    return {loss, g};
  }

  void apply_update(const NetGradients& g, double beta) {
    for (size_t l = 0; l < W_.size(); ++l) {
      W_[l] -= beta * g.dW[l];
      b_[l] -= beta * g.db[l];
    }
  }

  /// One SGD step over the batch; throws on a non-finite loss without
  /// touching the parameters.
  double train_batch(const std::vector<TdSample>& batch, double beta) {
    if (!(beta > 0.0)) throw ValidationError("qnetwork: learning rate <= 0");
    auto [loss, grads] = loss_and_gradients(batch);
    if (!std::isfinite(loss))
      throw SolverError("qnetwork: diverged (non-finite loss)");
    apply_update(grads, beta);
    return loss;
  }

  Eigen::VectorXd parameters() const { return flatten(W_, b_); }
  Eigen::VectorXd target_parameters() const { return flatten(Wt_, bt_); }

  void set_parameters(const Eigen::VectorXd& theta) { unflatten(theta, W_, b_); }
  void set_target_parameters(const Eigen::VectorXd& theta) {
    unflatten(theta, Wt_, bt_);
  }

 private:
  Eigen::VectorXd eval(const std::vector<Eigen::MatrixXd>& W,
                       const std::vector<Eigen::VectorXd>& b,
                       const Eigen::VectorXd& input) const {
    if (input.size() != sizes_.front())
      throw ValidationError("qnetwork: input dimension mismatch");
    Eigen::VectorXd a = input;
    for (size_t l = 0; l < W.size(); ++l) {
      Eigen::VectorXd z = W[l] * a + b[l];
      if (l + 1 < W.size()) {
        a = z.cwiseMax(0.0);
      } else {
        a.resize(z.size());
        for (Eigen::Index i = 0; i < z.size(); ++i)
          a[i] = output_scale_ * detail::sigmoid(z[i]);
      }
    }
    return a;
  }

  Eigen::VectorXd flatten(const std::vector<Eigen::MatrixXd>& W,
                          const std::vector<Eigen::VectorXd>& b) const {
    Eigen::Index total = 0;
    for (size_t l = 0; l < W.size(); ++l) total += W[l].size() + b[l].size();
    Eigen::VectorXd theta(total);
    Eigen::Index at = 0;
    for (size_t l = 0; l < W.size(); ++l) {
      for (Eigen::Index c = 0; c < W[l].cols(); ++c)
        for (Eigen::Index r = 0; r < W[l].rows(); ++r) theta[at++] = W[l](r, c);
      for (Eigen::Index r = 0; r < b[l].size(); ++r) theta[at++] = b[l][r];
    }
    return theta;
  }

  void unflatten(const Eigen::VectorXd& theta, std::vector<Eigen::MatrixXd>& W,
                 std::vector<Eigen::VectorXd>& b) {
    Eigen::Index at = 0;
    for (size_t l = 0; l < W.size(); ++l) {
      for (Eigen::Index c = 0; c < W[l].cols(); ++c)
        for (Eigen::Index r = 0; r < W[l].rows(); ++r) W[l](r, c) = theta[at++];
      for (Eigen::Index r = 0; r < b[l].size(); ++r) b[l][r] = theta[at++];
    }
    if (at != theta.size())
      throw ValidationError("qnetwork: parameter vector size mismatch");
  }

  std::vector<int> sizes_;
  double output_scale_;
  std::vector<Eigen::MatrixXd> W_;
  std::vector<Eigen::VectorXd> b_;
  std::vector<Eigen::MatrixXd> Wt_;
  std::vector<Eigen::VectorXd> bt_;
};

inline Eigen::VectorXd q_forward(const QNetwork& net, const MdpState& s) {
  return net.forward(s.to_input());
}

/// Exploration schedule of the slow-timescale loop.
inline double epsilon_schedule(int tau) {
  if (tau < 1) throw ValidationError("epsilon_schedule: tau is 1-based");
  return std::max(1.0 - 0.1 * static_cast<double>(tau / 50), 0.0);
}

inline int argmin_index(const Eigen::VectorXd& values) {
  int best = 0;
  for (int i = 1; i < values.size(); ++i)
    if (values[i] < values[best]) best = i;
  return best;
}

/// Epsilon-greedy over the predicted Q-values: uniformly random action with
/// probability epsilon, otherwise the argmin (ties to the lowest index).
inline Action select_action_from_values(const Eigen::VectorXd& values,
                                        int n_caps, double epsilon,
                                        std::mt19937_64& gen) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0))
    throw ValidationError("select_action: epsilon outside [0,1]");
  if (values.size() != action_space_size(n_caps))
    throw ValidationError("select_action: value vector length mismatch");
  if (epsilon > 0.0 && uniform01(gen) < epsilon)
    return Action::from_index(
        static_cast<int>(uniform_below(gen, values.size())), n_caps);
  return Action::from_index(argmin_index(values), n_caps);
}

inline Action select_action(const QNetwork& net, const MdpState& s,
                            double epsilon, std::mt19937_64& gen) {
  const int n_caps = static_cast<int>(s.y_hat.size());
  return select_action_from_values(q_forward(net, s), n_caps, epsilon, gen);
}

/// TD targets c + gamma * min_a' Q_tar(s', a') for a sampled batch.
inline Eigen::VectorXd td_targets(const std::vector<const Experience*>& batch,
                                  const QNetwork& target_net, double gamma) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw ValidationError("td_targets: gamma outside [0,1)");
  Eigen::VectorXd t(batch.size());
  for (size_t j = 0; j < batch.size(); ++j)
    t[j] = batch[j]->cost +
           gamma * target_net.forward_target(batch[j]->s_next.to_input())
                       .minCoeff();
  return t;
}

/// One SGD step on the empirical TD loss over the batch.
inline double sgd_step(QNetwork& net,
                       const std::vector<const Experience*>& batch,
                       const Eigen::VectorXd& targets, double beta) {
  if (static_cast<Eigen::Index>(batch.size()) != targets.size())
    throw ValidationError("sgd_step: batch/target length mismatch");
  std::vector<TdSample> samples(batch.size());
  for (size_t j = 0; j < batch.size(); ++j)
    samples[j] = {batch[j]->s_prev.to_input(), batch[j]->a.index(),
                  targets[j]};
  return net.train_batch(samples, beta);
}

/// K parallel equal-width Q-networks jointly covering the 2^{N_a} actions:
/// sub-network k predicts the contiguous index range [k*width, (k+1)*width).
/// All sub-networks consume the same state vector.
class HyperQNetwork {
 public:
  HyperQNetwork(int input_size, std::vector<int> hidden, int n_actions, int k,
                double output_scale, std::uint64_t seed)
      : n_actions_(n_actions), k_(k) {
    if (k < 1 || n_actions % k != 0)
      throw ValidationError("hyper qnetwork: K must divide the action count");
    width_ = n_actions / k;
    for (int i = 0; i < k; ++i) {
      std::vector<int> sizes;
      sizes.push_back(input_size);
      for (int h : hidden) sizes.push_back(h);
      sizes.push_back(width_);
      subs_.emplace_back(std::move(sizes), output_scale, derive_seed(seed, i));
    }
  }

  int k() const { return k_; }
  int group_width() const { return width_; }
  int n_actions() const { return n_actions_; }
  QNetwork& sub(int i) { return subs_[i]; }
  const QNetwork& sub(int i) const { return subs_[i]; }

  int owner_group(int action_index) const { return action_index / width_; }
  int local_index(int action_index) const { return action_index % width_; }

  Eigen::VectorXd forward(const Eigen::VectorXd& input) const {
    Eigen::VectorXd out(n_actions_);
    for (int g = 0; g < k_; ++g)
      out.segment(static_cast<Eigen::Index>(g) * width_, width_) =
          subs_[g].forward(input);
    return out;
  }

  Eigen::VectorXd forward_target(const Eigen::VectorXd& input) const {
    Eigen::VectorXd out(n_actions_);
    for (int g = 0; g < k_; ++g)
      out.segment(static_cast<Eigen::Index>(g) * width_, width_) =
          subs_[g].forward_target(input);
    return out;
  }

  void sync_target() {
    for (QNetwork& s : subs_) s.sync_target();
  }

 private:
  int n_actions_, k_, width_ = 0;
  std::vector<QNetwork> subs_;
};

inline Eigen::VectorXd hyper_forward(const HyperQNetwork& hnet,
                                     const MdpState& s) {
  return hnet.forward(s.to_input());
}

inline Action select_action(const HyperQNetwork& hnet, const MdpState& s,
                            double epsilon, std::mt19937_64& gen) {
  const int n_caps = static_cast<int>(s.y_hat.size());
  return select_action_from_values(hyper_forward(hnet, s), n_caps, epsilon,
                                   gen);
}

/// Routed training step: every experience updates the sub-network owning
/// its action index, with targets taken from the minimum over the full
/// concatenated target outputs. Returns the per-group batch losses (zero
/// for groups that drew no samples).
inline std::vector<double> hyper_train_step(
    HyperQNetwork& hnet, const std::vector<const Experience*>& batch,
    double gamma, double beta) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw ValidationError("hyper_train_step: gamma outside [0,1)");
  std::vector<std::vector<TdSample>> routed(hnet.k());
  for (const Experience* e : batch) {
    const double target =
        e->cost +
        gamma * hnet.forward_target(e->s_next.to_input()).minCoeff();
    const int idx = e->a.index();
    routed[hnet.owner_group(idx)].push_back(
        {e->s_prev.to_input(), hnet.local_index(idx), target});
  }
  std::vector<double> losses(hnet.k(), 0.0);
  for (int g = 0; g < hnet.k(); ++g)
    if (!routed[g].empty()) losses[g] = hnet.sub(g).train_batch(routed[g], beta);
  return losses;
}

// ---------------------------------------------------------------------------
// Checkpointing

/// Everything needed to resume a training run exactly: network and target
/// parameters, replay contents, the interval counter, and the serialized
/// states of the exploration and sampling RNG streams.
struct TrainingSnapshot {
  std::vector<int> layer_sizes;  // of one sub-network
  double output_scale = 1.0;
  int k = 1;
  int n_actions = 2;
  std::vector<Eigen::VectorXd> sub_params;
  std::vector<Eigen::VectorXd> sub_target_params;
  size_t buffer_capacity = 1;
  std::vector<Experience> buffer_items;  // oldest first
  std::uint64_t tau = 0;
  double cost_sum = 0.0;  // raw costs accumulated through tau
  MdpState state;         // s(tau), the input to the next action choice
  std::string rng_action;
  std::string rng_sample;
};

namespace detail {

inline nlohmann::json state_to_json(const MdpState& s) {
  std::vector<double> p(s.p_bar.data(), s.p_bar.data() + s.p_bar.size());
  return nlohmann::json{{"p_bar", p}, {"y", s.y_hat}};
}

inline MdpState state_from_json(const nlohmann::json& j) {
  MdpState s;
  const auto p = j.at("p_bar").get<std::vector<double>>();
  s.p_bar = Eigen::Map<const Eigen::VectorXd>(p.data(), p.size());
  s.y_hat = j.at("y").get<std::vector<std::uint8_t>>();
  return s;
}

inline std::vector<double> vec_to_std(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::VectorXd vec_from_std(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
}

}  // namespace detail

inline nlohmann::json snapshot_to_json(const TrainingSnapshot& snap) {
  nlohmann::json subs = nlohmann::json::array();
  for (size_t i = 0; i < snap.sub_params.size(); ++i)
    subs.push_back({{"theta", detail::vec_to_std(snap.sub_params[i])},
                    {"theta_tar", detail::vec_to_std(snap.sub_target_params[i])}});
  nlohmann::json items = nlohmann::json::array();
  for (const Experience& e : snap.buffer_items)
    items.push_back({{"s_prev", detail::state_to_json(e.s_prev)},
                     {"action", e.a.index()},
                     {"cost", e.cost},
                     {"s_next", detail::state_to_json(e.s_next)}});
  return nlohmann::json{{"version", 1},
                        {"layer_sizes", snap.layer_sizes},
                        {"output_scale", snap.output_scale},
                        {"k", snap.k},
                        {"n_actions", snap.n_actions},
                        {"subs", subs},
                        {"buffer", {{"capacity", snap.buffer_capacity},
                                    {"items", items}}},
                        {"tau", snap.tau},
                        {"cost_sum", snap.cost_sum},
                        {"state", detail::state_to_json(snap.state)},
                        {"rng_action", snap.rng_action},
                        {"rng_sample", snap.rng_sample}};
}

inline TrainingSnapshot snapshot_from_json(const nlohmann::json& j) {
  TrainingSnapshot snap;
  try {
    if (j.at("version").get<int>() != 1)
      throw ParseError("checkpoint: unsupported version");
    snap.layer_sizes = j.at("layer_sizes").get<std::vector<int>>();
    snap.output_scale = j.at("output_scale").get<double>();
    snap.k = j.at("k").get<int>();
    snap.n_actions = j.at("n_actions").get<int>();
    for (const auto& sub : j.at("subs")) {
      snap.sub_params.push_back(detail::vec_from_std(
          sub.at("theta").get<std::vector<double>>()));
      snap.sub_target_params.push_back(detail::vec_from_std(
          sub.at("theta_tar").get<std::vector<double>>()));
    }
    snap.buffer_capacity = j.at("buffer").at("capacity").get<size_t>();
    const int n_caps =
        static_cast<int>(std::lround(std::log2(snap.n_actions)));
    for (const auto& it : j.at("buffer").at("items")) {
      Experience e;
      e.s_prev = detail::state_from_json(it.at("s_prev"));
      e.a = Action::from_index(it.at("action").get<int>(), n_caps);
      e.cost = it.at("cost").get<double>();
      e.s_next = detail::state_from_json(it.at("s_next"));
      snap.buffer_items.push_back(std::move(e));
    }
    snap.tau = j.at("tau").get<std::uint64_t>();
    snap.cost_sum = j.at("cost_sum").get<double>();
    snap.state = detail::state_from_json(j.at("state"));
    snap.rng_action = j.at("rng_action").get<std::string>();
    snap.rng_sample = j.at("rng_sample").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint json: ") + e.what());
  }
  return snap;
}

inline void save_snapshot(const TrainingSnapshot& snap,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open checkpoint for writing: " + path);
  out << snapshot_to_json(snap).dump(2) << "\n";
}

inline TrainingSnapshot load_snapshot(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint json: " + std::string(e.what()));
  }
  return snapshot_from_json(j);
}

}  // namespace vgrid
