#include "exohand/rl.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace exohand {

namespace {

constexpr double kHalfLog2Pi = 0.91893853320467274178;  // 0.5 * log(2 pi)

struct Layer {
  Eigen::Index w = 0;  // offset of W (out x in, col-major)
  Eigen::Index b = 0;  // offset of b (out)
  int in = 0;
  int out = 0;
};

struct Layout {
  std::vector<Layer> policy;
  Eigen::Index log_std = 0;
  std::vector<Layer> value;
  Eigen::Index total = 0;
};

Layout make_layout(int obs_dim, int act_dim, const std::vector<int>& hidden) {
  Layout lay;
  Eigen::Index off = 0;
  auto build = [&](std::vector<Layer>& layers, int out_dim) {
    int in = obs_dim;
    std::vector<int> sizes = hidden;
    sizes.push_back(out_dim);
    for (int out : sizes) {
      Layer l;
      l.in = in;
      l.out = out;
      l.w = off;
      off += static_cast<Eigen::Index>(in) * out;
      l.b = off;
      off += out;
      layers.push_back(l);
      in = out;
    }
  };
  build(lay.policy, act_dim);
  lay.log_std = off;
  off += act_dim;
  build(lay.value, 1);
  lay.total = off;
  return lay;
}

using ConstMatMap = Eigen::Map<const Mat>;
using ConstVecMap = Eigen::Map<const Vec>;

ConstMatMap weight(const Vec& flat, const Layer& l) {
  return ConstMatMap(flat.data() + l.w, l.out, l.in);
}
ConstVecMap bias(const Vec& flat, const Layer& l) {
  return ConstVecMap(flat.data() + l.b, l.out);
}

/// Forward through one net, keeping the input of every layer.
Mat forward_net(const Vec& flat, const std::vector<Layer>& layers, const Mat& x,
                std::vector<Mat>* cache) {
  Mat a = x;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Layer& l = layers[i];
    Mat z = weight(flat, l) * a;
    z.colwise() += bias(flat, l);
    if (cache) cache->push_back(std::move(a));
    if (i + 1 < layers.size()) {
      a = z.array().tanh().matrix();
    } else {
      a = std::move(z);
    }
  }
  return a;
}

/// Accumulates parameter gradients given d(loss)/d(output).
void backward_net(const Vec& flat, const std::vector<Layer>& layers,
                  const std::vector<Mat>& cache, Mat d_out, Vec& grad) {
  for (std::size_t i = layers.size(); i-- > 0;) {
    const Layer& l = layers[i];
    const Mat& a_in = cache[i];
    Eigen::Map<Mat>(grad.data() + l.w, l.out, l.in).noalias() += d_out * a_in.transpose();
    Eigen::Map<Vec>(grad.data() + l.b, l.out) += d_out.rowwise().sum();
    if (i == 0) break;
    Mat d_a = weight(flat, l).transpose() * d_out;
    d_out = (d_a.array() * (1.0 - a_in.array().square())).matrix();
  }
}

void check_dims(const PolicyParams& p) {
  if (p.flat.size() != PolicyParams::size_for(p.obs_dim, p.act_dim, p.hidden)) {
    throw UsageError("policy parameter vector has the wrong size");
  }
}

}  // namespace

// --- PolicyParams -----------------------------------------------------------------

Eigen::Index PolicyParams::size_for(int obs_dim, int act_dim, const std::vector<int>& hidden) {
  return make_layout(obs_dim, act_dim, hidden).total;
}

PolicyParams PolicyParams::zeros(int obs_dim, int act_dim, const std::vector<int>& hidden) {
  if (obs_dim <= 0 || act_dim <= 0) throw ConfigError("policy dims must be positive");
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("hidden layer sizes must be positive");
  }
  PolicyParams p;
  p.obs_dim = obs_dim;
  p.act_dim = act_dim;
  p.hidden = hidden;
  p.flat = Vec::Zero(size_for(obs_dim, act_dim, hidden));
  return p;
}

PolicyParams PolicyParams::init(int obs_dim, int act_dim, const std::vector<int>& hidden,
                                Rng& rng, double log_std_init) {
  PolicyParams p = zeros(obs_dim, act_dim, hidden);
  const Layout lay = make_layout(obs_dim, act_dim, hidden);
  auto fill = [&](const std::vector<Layer>& layers, double out_gain) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Layer& l = layers[i];
      const double gain = (i + 1 == layers.size()) ? out_gain : 1.0;
      const double scale = gain / std::sqrt(static_cast<double>(l.in));
      for (Eigen::Index k = 0; k < static_cast<Eigen::Index>(l.in) * l.out; ++k) {
        p.flat[l.w + k] = scale * rng.normal();
      }
    }
  };
  fill(lay.policy, 0.01);
  fill(lay.value, 1.0);
  p.log_std().setConstant(log_std_init);
  return p;
}

Eigen::Index PolicyParams::log_std_offset() const {
  return make_layout(obs_dim, act_dim, hidden).log_std;
}

Eigen::Map<const Vec> PolicyParams::log_std() const {
  return Eigen::Map<const Vec>(flat.data() + log_std_offset(), act_dim);
}

Eigen::Map<Vec> PolicyParams::log_std() {
  return Eigen::Map<Vec>(flat.data() + log_std_offset(), act_dim);
}

std::string PolicyParams::digest() const {
  std::ostringstream head;
  head << obs_dim << ':' << act_dim;
  for (int h : hidden) head << ':' << h;
  return sha256_hex(head.str() + "|" +
                    sha256_hex(std::span<const double>(flat.data(),
                                                       static_cast<std::size_t>(flat.size()))));
}

void PolicyParams::validate() const {
  if (obs_dim <= 0 || act_dim <= 0) throw ValidationError("policy dims must be positive");
  if (flat.size() != size_for(obs_dim, act_dim, hidden)) {
    throw ValidationError("policy parameter count does not match the architecture");
  }
  if (!flat.allFinite()) throw ValidationError("policy parameters are not finite");
}

// --- normalizers ------------------------------------------------------------------

RunningNorm RunningNorm::identity(int dim) {
  RunningNorm n;
  n.mean = Vec::Zero(dim);
  n.var = Vec::Ones(dim);
  return n;
}

void RunningNorm::update(const Mat& batch) {
  const double nb = static_cast<double>(batch.cols());
  if (nb == 0) return;
  const Vec bmean = batch.rowwise().mean();
  const Vec bvar = (batch.colwise() - bmean).array().square().rowwise().sum().matrix() / nb;
  const double tot = count + nb;
  const Vec delta = bmean - mean;
  const Vec m2 = var * count + bvar * nb + delta.cwiseProduct(delta) * (count * nb / tot);
  mean += delta * (nb / tot);
  var = m2 / tot;
  count = tot;
}

Vec RunningNorm::apply(const Vec& x) const {
  return ((x - mean).array() / (var.array() + 1e-8).sqrt()).cwiseMax(-clip).cwiseMin(clip);
}

Mat RunningNorm::apply(const Mat& x) const {
  Mat out = x.colwise() - mean;
  const Vec inv = (var.array() + 1e-8).rsqrt();
  out = (out.array().colwise() * inv.array()).cwiseMax(-clip).cwiseMin(clip);
  return out;
}

void ScalarStat::update(const Vec& x) {
  const double nb = static_cast<double>(x.size());
  if (nb == 0) return;
  const double bmean = x.mean();
  const double bvar = (x.array() - bmean).square().sum() / nb;
  const double tot = count + nb;
  const double delta = bmean - mean;
  const double m2 = var * count + bvar * nb + delta * delta * count * nb / tot;
  mean += delta * nb / tot;
  var = m2 / tot;
  count = tot;
}

// --- forward ----------------------------------------------------------------------

PolicyOutput policy_forward(const PolicyParams& params, const Vec& obs) {
  if (obs.size() != params.obs_dim) {
    throw UsageError("observation has " + std::to_string(obs.size()) + " entries, policy expects " +
                     std::to_string(params.obs_dim));
  }
  const BatchOutput b = policy_forward_batch(params, obs);
  return {b.mean.col(0), params.log_std(), b.value[0]};
}

BatchOutput policy_forward_batch(const PolicyParams& params, const Mat& obs) {
  check_dims(params);
  if (obs.rows() != params.obs_dim) throw UsageError("observation dimension mismatch");
  const Layout lay = make_layout(params.obs_dim, params.act_dim, params.hidden);
  BatchOutput out;
  out.mean = forward_net(params.flat, lay.policy, obs, nullptr);
  out.value = forward_net(params.flat, lay.value, obs, nullptr).row(0).transpose();
  return out;
}

double gaussian_log_prob(const Vec& action, const Vec& mean, const Vec& log_std) {
  const Vec z = (action - mean).array() * (-log_std).array().exp();
  return -0.5 * z.squaredNorm() - log_std.sum() - kHalfLog2Pi * static_cast<double>(action.size());
}

// --- GAE ----------------------------------------------------------------------------

GaeResult gae(const Vec& rewards, const Vec& values, const std::vector<bool>& dones,
              double last_value, double gamma, double lam) {
  const Eigen::Index n = rewards.size();
  if (values.size() != n || static_cast<Eigen::Index>(dones.size()) != n) {
    throw UsageError("gae inputs must have equal length");
  }
  GaeResult r;
  r.advantages.resize(n);
  double next_adv = 0.0;
  double next_value = last_value;
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const double nonterminal = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * nonterminal - values[t];
    next_adv = delta + gamma * lam * nonterminal * next_adv;
    r.advantages[t] = next_adv;
    next_value = values[t];
  }
  r.returns = r.advantages + values;
  return r;
}

void RolloutBuffer::compute_advantages(double gamma, double lam) {
  advantages.resize(size());
  returns.resize(size());
  for (int e = 0; e < n_envs; ++e) {
    const Eigen::Index o = static_cast<Eigen::Index>(e) * n_steps;
    std::vector<bool> d(dones.begin() + o, dones.begin() + o + n_steps);
    const GaeResult g = gae(rewards.segment(o, n_steps), values.segment(o, n_steps), d,
                            last_values[e], gamma, lam);
    advantages.segment(o, n_steps) = g.advantages;
    returns.segment(o, n_steps) = g.returns;
  }
}

void RolloutBuffer::normalize_advantages() {
  const double n = static_cast<double>(advantages.size());
  if (n < 2) return;
  const double mean = advantages.mean();
  const double sd = std::sqrt((advantages.array() - mean).square().sum() / n);
  advantages = ((advantages.array() - mean) / (sd + 1e-12)).matrix();
}

// --- PPO config ------------------------------------------------------------------

void PPOConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("gamma must be in [0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("gae_lambda must be in [0, 1]");
  if (!(clip_eps > 0.0)) throw ConfigError("clip_eps must be > 0");
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (epochs < 1 || minibatch_size < 1 || n_envs < 1 || n_steps < 1) {
    throw ConfigError("epochs, minibatch_size, n_envs and n_steps must be >= 1");
  }
  if (entropy_coef < 0.0 || value_coef < 0.0) throw ConfigError("loss coefficients must be >= 0");
  if (!(max_grad_norm > 0.0)) throw ConfigError("max_grad_norm must be > 0");
  if (total_steps < 0) throw ConfigError("total_steps must be >= 0");
  for (int h : hidden) {
    if (h <= 0) throw ConfigError("hidden sizes must be positive");
  }
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

json ppo_config_to_json(const PPOConfig& c) {
  return {{"gamma", c.gamma},
          {"gae_lambda", c.gae_lambda},
          {"clip_eps", c.clip_eps},
          {"lr", c.lr},
          {"epochs", c.epochs},
          {"minibatch_size", c.minibatch_size},
          {"n_envs", c.n_envs},
          {"n_steps", c.n_steps},
          {"entropy_coef", c.entropy_coef},
          {"value_coef", c.value_coef},
          {"max_grad_norm", c.max_grad_norm},
          {"total_steps", c.total_steps},
          {"hidden", c.hidden},
          {"log_std_init", c.log_std_init},
          {"normalize_obs", c.normalize_obs},
          {"normalize_reward", c.normalize_reward},
          {"anneal_lr", c.anneal_lr},
          {"checkpoint_every", c.checkpoint_every},
          {"seed", c.seed}};
}

PPOConfig ppo_config_from_json(const json& j) {
  PPOConfig c;
  try {
    c.gamma = j.value("gamma", c.gamma);
    c.gae_lambda = j.value("gae_lambda", c.gae_lambda);
    c.clip_eps = j.value("clip_eps", c.clip_eps);
    c.lr = j.value("lr", c.lr);
    c.epochs = j.value("epochs", c.epochs);
    c.minibatch_size = j.value("minibatch_size", c.minibatch_size);
    c.n_envs = j.value("n_envs", c.n_envs);
    c.n_steps = j.value("n_steps", c.n_steps);
    c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
    c.value_coef = j.value("value_coef", c.value_coef);
    c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
    c.total_steps = j.value("total_steps", c.total_steps);
    c.hidden = j.value("hidden", c.hidden);
    c.log_std_init = j.value("log_std_init", c.log_std_init);
    c.normalize_obs = j.value("normalize_obs", c.normalize_obs);
    c.normalize_reward = j.value("normalize_reward", c.normalize_reward);
    c.anneal_lr = j.value("anneal_lr", c.anneal_lr);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("rl config: ") + e.what());
  }
  c.validate();
  return c;
}

// --- loss and gradients -------------------------------------------------------

LossStats ppo_loss(const PolicyParams& params, const RolloutBuffer& buf,
                   const std::vector<Eigen::Index>& idx, const PPOConfig& cfg, Vec* grad) {
  check_dims(params);
  const auto nb = static_cast<Eigen::Index>(idx.size());
  if (nb == 0) throw UsageError("empty minibatch");
  const Layout lay = make_layout(params.obs_dim, params.act_dim, params.hidden);
  Mat obs(params.obs_dim, nb), act(params.act_dim, nb);
  Vec old_lp(nb), adv(nb), ret(nb);
  for (Eigen::Index b = 0; b < nb; ++b) {
    const Eigen::Index c = idx[static_cast<std::size_t>(b)];
    obs.col(b) = buf.obs.col(c);
    act.col(b) = buf.actions.col(c);
    old_lp[b] = buf.log_probs[c];
    adv[b] = buf.advantages[c];
    ret[b] = buf.returns[c];
  }
  std::vector<Mat> pcache, vcache;
  const Mat mean = forward_net(params.flat, lay.policy, obs, grad ? &pcache : nullptr);
  const Vec value =
      forward_net(params.flat, lay.value, obs, grad ? &vcache : nullptr).row(0).transpose();
  const Vec log_std = params.log_std();
  const Vec inv_std = (-log_std).array().exp();

  const Mat z = (act - mean).array().colwise() * inv_std.array();
  const Vec lp = (-0.5 * z.array().square().colwise().sum()).transpose() -
                 Vec::Constant(nb, log_std.sum() + kHalfLog2Pi * params.act_dim).array();
  const double inv_n = 1.0 / static_cast<double>(nb);

  LossStats s;
  Vec d_lp(nb);
  double surr_sum = 0.0;
  for (Eigen::Index b = 0; b < nb; ++b) {
    const double ratio = std::exp(lp[b] - old_lp[b]);
    const double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
    const double s1 = ratio * adv[b];
    const double s2 = clipped * adv[b];
    if (s1 <= s2) {
      surr_sum += s1;
      d_lp[b] = -inv_n * adv[b] * ratio;
    } else {
      surr_sum += s2;
      d_lp[b] = 0.0;
    }
    if (std::abs(ratio - 1.0) > cfg.clip_eps) s.clip_fraction += inv_n;
    s.approx_kl += inv_n * ((ratio - 1.0) - (lp[b] - old_lp[b]));
  }
  s.policy_loss = -surr_sum * inv_n;
  const Vec verr = value - ret;
  s.value_loss = verr.squaredNorm() * inv_n;
  s.entropy = log_std.sum() + (0.5 + kHalfLog2Pi) * params.act_dim;
  s.total = s.policy_loss + cfg.value_coef * s.value_loss - cfg.entropy_coef * s.entropy;

  if (grad) {
    grad->setZero(params.flat.size());
    // d lp / d mean = z / sigma; d lp / d log_std = z^2 - 1.
    Mat d_mean = (z.array().colwise() * inv_std.array()).rowwise() * d_lp.transpose().array();
    Vec d_log_std = (z.array().square() - 1.0).matrix() * d_lp;
    d_log_std.array() -= cfg.entropy_coef;
    Eigen::Map<Vec>(grad->data() + lay.log_std, params.act_dim) += d_log_std;
    backward_net(params.flat, lay.policy, pcache, std::move(d_mean), *grad);
    const Mat d_value = (2.0 * cfg.value_coef * inv_n) * verr.transpose();
    backward_net(params.flat, lay.value, vcache, d_value, *grad);
  }
  return s;
}

Vec log_prob_gradient(const PolicyParams& params, const Mat& obs, const Mat& actions) {
  check_dims(params);
  const Layout lay = make_layout(params.obs_dim, params.act_dim, params.hidden);
  std::vector<Mat> cache;
  const Mat mean = forward_net(params.flat, lay.policy, obs, &cache);
  const Vec inv_std = (-params.log_std()).array().exp();
  const Mat z = (actions - mean).array().colwise() * inv_std.array();
  Vec grad = Vec::Zero(params.flat.size());
  Eigen::Map<Vec>(grad.data() + lay.log_std, params.act_dim) =
      (z.array().square() - 1.0).rowwise().sum().matrix();
  backward_net(params.flat, lay.policy, cache, z.array().colwise() * inv_std.array(), grad);
  return grad;
}

Vec value_gradient(const PolicyParams& params, const Mat& obs) {
  check_dims(params);
  const Layout lay = make_layout(params.obs_dim, params.act_dim, params.hidden);
  std::vector<Mat> cache;
  forward_net(params.flat, lay.value, obs, &cache);
  Vec grad = Vec::Zero(params.flat.size());
  backward_net(params.flat, lay.value, cache, Mat::Ones(1, obs.cols()), grad);
  return grad;
}

void Adam::reset(Eigen::Index n) {
  m = Vec::Zero(n);
  v = Vec::Zero(n);
  t = 0;
}

void Adam::step(Vec& params, const Vec& grad, double lr) {
  if (m.size() != params.size()) reset(params.size());
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

LossStats ppo_update(const RolloutBuffer& buf, PolicyParams& params, Adam& adam,
                     const PPOConfig& cfg, Rng& rng, double lr) {
  const Eigen::Index n = buf.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  const PolicyParams backup = params;
  const Adam adam_backup = adam;
  LossStats acc;
  int batches = 0;
  Vec grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.minibatch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.minibatch_size));
      const std::vector<Eigen::Index> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
      const LossStats s = ppo_loss(params, buf, idx, cfg, &grad);
      if (!std::isfinite(s.total) || !grad.allFinite()) {
        params = backup;
        adam = adam_backup;
        throw NumericalError("non-finite PPO loss or gradient (epoch " + std::to_string(epoch) +
                             ", policy loss " + std::to_string(s.policy_loss) +
                             ", value loss " + std::to_string(s.value_loss) + ")");
      }
      const double norm = grad.norm();
      if (norm > cfg.max_grad_norm) grad *= cfg.max_grad_norm / norm;
      adam.step(params.flat, grad, lr);
      acc.policy_loss += s.policy_loss;
      acc.value_loss += s.value_loss;
      acc.entropy += s.entropy;
      acc.approx_kl += s.approx_kl;
      acc.clip_fraction += s.clip_fraction;
      acc.total += s.total;
      ++batches;
    }
  }
  if (!params.flat.allFinite()) {
    params = backup;
    adam = adam_backup;
    throw NumericalError("policy parameters became non-finite");
  }
  const double inv = 1.0 / std::max(batches, 1);
  acc.policy_loss *= inv;
  acc.value_loss *= inv;
  acc.entropy *= inv;
  acc.approx_kl *= inv;
  acc.clip_fraction *= inv;
  acc.total *= inv;
  return acc;
}

// --- thread pool --------------------------------------------------------------

struct ThreadPool::Impl {
  std::vector<std::thread> workers;
  std::mutex mu;
  std::condition_variable cv_job;
  std::condition_variable cv_done;
  const std::function<void(int)>* fn = nullptr;
  int n = 0;
  std::atomic<int> next{0};
  int active = 0;
  std::uint64_t generation = 0;
  bool stop = false;
  std::exception_ptr error;

  void run_items() {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        (*fn)(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  }

  void loop() {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lock(mu);
        cv_job.wait(lock, [&] { return stop || generation != seen; });
        if (stop) return;
        seen = generation;
      }
      run_items();
      std::lock_guard<std::mutex> lock(mu);
      if (--active == 0) cv_done.notify_one();
    }
  }
};

ThreadPool::ThreadPool(int threads) : threads_(std::max(threads, 1)) {
  if (threads_ > 1) {
    impl_ = std::make_unique<Impl>();
    for (int i = 0; i < threads_ - 1; ++i) {
      impl_->workers.emplace_back([this] { impl_->loop(); });
    }
  }
}

ThreadPool::~ThreadPool() {
  if (impl_) {
    {
      std::lock_guard<std::mutex> lock(impl_->mu);
      impl_->stop = true;
    }
    impl_->cv_job.notify_all();
    for (auto& t : impl_->workers) t.join();
  }
}

void ThreadPool::parallel_for(int n, const std::function<void(int)>& fn) {
  if (!impl_ || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  {
    std::lock_guard<std::mutex> lock(impl_->mu);
    impl_->fn = &fn;
    impl_->n = n;
    impl_->next = 0;
    impl_->active = static_cast<int>(impl_->workers.size());
    impl_->error = nullptr;
    ++impl_->generation;
  }
  impl_->cv_job.notify_all();
  impl_->run_items();
  std::unique_lock<std::mutex> lock(impl_->mu);
  impl_->cv_done.wait(lock, [&] { return impl_->active == 0; });
  if (impl_->error) std::rethrow_exception(impl_->error);
}

int configured_threads() {
  const char* v = std::getenv("EXOHAND_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1 || n > 256) {
    throw ConfigError(std::string("EXOHAND_THREADS must be an integer in [1, 256], got ") + v);
  }
  return static_cast<int>(n);
}

// --- rollouts --------------------------------------------------------------------

RolloutBuffer collect_rollouts(std::vector<Environment*>& envs, std::vector<EnvWorker>& workers,
                               const PolicyParams& params, const RunningNorm& obs_norm,
                               int n_steps, double gamma, ScalarStat* ret_stat,
                               RolloutStats* stats, ThreadPool* pool) {
  const int ne = static_cast<int>(envs.size());
  if (ne == 0 || workers.size() != envs.size()) {
    throw ConfigError("collect_rollouts needs one worker per environment");
  }
  for (Environment* env : envs) {
    if (env->obs_dim() != params.obs_dim || env->action_dim() != params.act_dim) {
      throw ConfigError("environment dimensions do not match the policy");
    }
  }
  RolloutBuffer buf;
  buf.n_envs = ne;
  buf.n_steps = n_steps;
  const Eigen::Index total = buf.size();
  buf.obs.resize(params.obs_dim, total);
  buf.actions.resize(params.act_dim, total);
  buf.log_probs.resize(total);
  buf.rewards.resize(total);
  buf.raw_rewards.resize(total);
  buf.values.resize(total);
  buf.dones.assign(static_cast<std::size_t>(total), false);
  buf.last_values.resize(ne);
  Mat raw_obs(params.obs_dim, total);
  Vec ret_trace(total);

  for (int e = 0; e < ne; ++e) {
    EnvWorker& w = workers[static_cast<std::size_t>(e)];
    if (w.needs_reset) {
      w.obs = envs[static_cast<std::size_t>(e)]->reset(w.rng.next_u64());
      w.needs_reset = false;
      w.ret_running = 0.0;
      w.ep_return = 0.0;
      w.ep_length = 0;
    }
  }

  const Vec log_std = params.log_std();
  const Vec std_dev = log_std.array().exp();
  const double reward_scale =
      ret_stat ? 1.0 / std::sqrt(ret_stat->var + 1e-8) : 1.0;

  struct PerEnv {
    double demo_err = 0.0, obj_err = 0.0, success = 0.0, reward = 0.0;
    int episodes = 0;
    double episode_reward = 0.0;
  };
  std::vector<PerEnv> acc(static_cast<std::size_t>(ne));
  Mat step_obs(params.obs_dim, ne);

  for (int t = 0; t < n_steps; ++t) {
    for (int e = 0; e < ne; ++e) step_obs.col(e) = workers[static_cast<std::size_t>(e)].obs;
    const Mat normed = obs_norm.apply(step_obs);
    const BatchOutput fwd = policy_forward_batch(params, normed);
    auto body = [&](int e) {
      EnvWorker& w = workers[static_cast<std::size_t>(e)];
      const Eigen::Index col = static_cast<Eigen::Index>(e) * n_steps + t;
      Vec a(params.act_dim);
      for (int i = 0; i < params.act_dim; ++i) {
        a[i] = fwd.mean(i, e) + std_dev[i] * w.rng.normal();
      }
      buf.obs.col(col) = normed.col(e);
      raw_obs.col(col) = step_obs.col(e);
      buf.actions.col(col) = a;
      buf.log_probs[col] = gaussian_log_prob(a, fwd.mean.col(e), log_std);
      buf.values[col] = fwd.value[e];
      StepResult res;
      try {
        res = envs[static_cast<std::size_t>(e)]->step(a);
      } catch (const StepError&) {
        // Diverged physics ends the episode with zero reward.
        res.done = true;
        res.reward = 0.0;
      }
      PerEnv& pe = acc[static_cast<std::size_t>(e)];
      pe.demo_err += res.info.demo_err;
      pe.obj_err += res.info.obj_pos_err;
      pe.success += res.info.success_step ? 1.0 : 0.0;
      pe.reward += res.reward;
      buf.raw_rewards[col] = res.reward;
      w.ret_running = w.ret_running * gamma + res.reward;
      ret_trace[col] = w.ret_running;
      buf.rewards[col] = res.reward * reward_scale;
      w.ep_return += res.reward;
      ++w.ep_length;
      buf.dones[static_cast<std::size_t>(col)] = res.done;
      if (res.done) {
        ++pe.episodes;
        pe.episode_reward += w.ep_return;
        w.obs = envs[static_cast<std::size_t>(e)]->reset(w.rng.next_u64());
        w.ret_running = 0.0;
        w.ep_return = 0.0;
        w.ep_length = 0;
      } else {
        w.obs = std::move(res.obs);
      }
    };
    if (pool) {
      pool->parallel_for(ne, body);
    } else {
      for (int e = 0; e < ne; ++e) body(e);
    }
  }
  for (int e = 0; e < ne; ++e) step_obs.col(e) = workers[static_cast<std::size_t>(e)].obs;
  buf.last_values = policy_forward_batch(params, obs_norm.apply(step_obs)).value;
  buf.raw_obs = std::move(raw_obs);
  if (ret_stat) ret_stat->update(ret_trace);

  if (stats) {
    RolloutStats s;
    const double inv = 1.0 / static_cast<double>(total);
    for (const PerEnv& pe : acc) {
      s.mean_demo_err += pe.demo_err * inv;
      s.mean_obj_err += pe.obj_err * inv;
      s.success_rate += pe.success * inv;
      s.mean_step_reward += pe.reward * inv;
      s.episodes += pe.episodes;
      s.mean_episode_reward += pe.episode_reward;
    }
    if (s.episodes > 0) s.mean_episode_reward /= s.episodes;
    *stats = s;
  }
  return buf;
}

RolloutBuffer collect_rollouts(std::vector<Environment*>& envs, const PolicyParams& params,
                               int n_steps, std::uint64_t seed) {
  std::vector<EnvWorker> workers(envs.size());
  for (std::size_t e = 0; e < envs.size(); ++e) workers[e].rng.seed(seed + e);
  return collect_rollouts(envs, workers, params, RunningNorm::identity(params.obs_dim), n_steps,
                          0.99, nullptr, nullptr, nullptr);
}

// --- report -------------------------------------------------------------------------

std::string TrainReport::to_jsonl() const {
  std::string out;
  for (const auto& r : iterations) {
    json j = {{"iteration", r.iteration},
              {"env_steps", r.env_steps},
              {"seed", seed},
              {"mean_step_reward", r.rollout.mean_step_reward},
              {"episodes", r.rollout.episodes},
              {"demo_err", r.rollout.mean_demo_err},
              {"obj_err", r.rollout.mean_obj_err},
              {"success_rate", r.rollout.success_rate},
              {"policy_loss", r.loss.policy_loss},
              {"value_loss", r.loss.value_loss},
              {"entropy", r.loss.entropy},
              {"approx_kl", r.loss.approx_kl},
              {"clip_fraction", r.loss.clip_fraction},
              {"lr", r.lr}};
    j["mean_episode_reward"] =
        r.rollout.episodes > 0 ? json(r.rollout.mean_episode_reward) : json(nullptr);
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string TrainReport::summary_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "iteration,env_steps,mean_step_reward,demo_err,obj_err,success_rate,policy_loss,"
        "value_loss,entropy\n";
  for (const auto& r : iterations) {
    os << r.iteration << ',' << r.env_steps << ',' << r.rollout.mean_step_reward << ','
       << r.rollout.mean_demo_err << ',' << r.rollout.mean_obj_err << ','
       << r.rollout.success_rate << ',' << r.loss.policy_loss << ',' << r.loss.value_loss << ','
       << r.loss.entropy << '\n';
  }
  return os.str();
}

// --- checkpoints --------------------------------------------------------------------

namespace {

json iteration_to_json(const IterationRecord& r) {
  return {{"iteration", r.iteration},
          {"env_steps", r.env_steps},
          {"lr", r.lr},
          {"rollout",
           {r.rollout.mean_step_reward, r.rollout.mean_demo_err, r.rollout.mean_obj_err,
            r.rollout.success_rate, r.rollout.episodes, r.rollout.mean_episode_reward}},
          {"loss",
           {r.loss.policy_loss, r.loss.value_loss, r.loss.entropy, r.loss.approx_kl,
            r.loss.clip_fraction, r.loss.total}}};
}

IterationRecord iteration_from_json(const json& j) {
  IterationRecord r;
  r.iteration = j.at("iteration").get<int>();
  r.env_steps = j.at("env_steps").get<std::int64_t>();
  r.lr = j.at("lr").get<double>();
  const auto& ro = j.at("rollout");
  r.rollout.mean_step_reward = ro.at(0).get<double>();
  r.rollout.mean_demo_err = ro.at(1).get<double>();
  r.rollout.mean_obj_err = ro.at(2).get<double>();
  r.rollout.success_rate = ro.at(3).get<double>();
  r.rollout.episodes = ro.at(4).get<int>();
  r.rollout.mean_episode_reward = ro.at(5).get<double>();
  const auto& lo = j.at("loss");
  r.loss.policy_loss = lo.at(0).get<double>();
  r.loss.value_loss = lo.at(1).get<double>();
  r.loss.entropy = lo.at(2).get<double>();
  r.loss.approx_kl = lo.at(3).get<double>();
  r.loss.clip_fraction = lo.at(4).get<double>();
  r.loss.total = lo.at(5).get<double>();
  return r;
}

}  // namespace

json train_state_to_json(const TrainState& s, const PPOConfig& cfg) {
  json workers = json::array();
  for (std::size_t i = 0; i < s.workers.size(); ++i) {
    const EnvWorker& w = s.workers[i];
    workers.push_back({{"rng", w.rng.state()},
                       {"obs", to_json(w.obs)},
                       {"needs_reset", w.needs_reset},
                       {"ret_running", w.ret_running},
                       {"ep_return", w.ep_return},
                       {"ep_length", w.ep_length},
                       {"env", i < s.env_states.size() ? s.env_states[i] : json(nullptr)}});
  }
  json iters = json::array();
  for (const auto& r : s.report.iterations) iters.push_back(iteration_to_json(r));
  return {{"format", "exohand-checkpoint"},
          {"version", 1},
          {"stage", s.stage},
          {"policy",
           {{"obs_dim", s.params.obs_dim},
            {"act_dim", s.params.act_dim},
            {"hidden", s.params.hidden},
            {"params", to_json(s.params.flat)},
            {"digest", s.params.digest()}}},
          {"obs_norm",
           {{"mean", to_json(s.obs_norm.mean)},
            {"var", to_json(s.obs_norm.var)},
            {"count", s.obs_norm.count},
            {"clip", s.obs_norm.clip}}},
          {"ret_stat", {s.ret_stat.mean, s.ret_stat.var, s.ret_stat.count}},
          {"adam", {{"m", to_json(s.adam.m)}, {"v", to_json(s.adam.v)}, {"t", s.adam.t}}},
          {"rng", s.rng.state()},
          {"workers", workers},
          {"iteration", s.iteration},
          {"env_steps", s.env_steps},
          {"report", {{"seed", s.report.seed}, {"iterations", iters}}},
          {"config", ppo_config_to_json(cfg)},
          {"meta", s.meta}};
}

TrainState train_state_from_json(const json& j) {
  try {
    if (j.value("format", "") != "exohand-checkpoint") {
      throw ParseError("not an exohand checkpoint");
    }
    if (j.at("version").get<int>() != 1) throw ParseError("unsupported checkpoint version");
    TrainState s;
    s.stage = j.at("stage").get<std::string>();
    s.meta = j.value("meta", json::object());
    const auto& p = j.at("policy");
    s.params.obs_dim = p.at("obs_dim").get<int>();
    s.params.act_dim = p.at("act_dim").get<int>();
    s.params.hidden = p.at("hidden").get<std::vector<int>>();
    s.params.flat = vec_from_json(p.at("params"));
    s.params.validate();
    if (p.at("digest").get<std::string>() != s.params.digest()) {
      throw ValidationError("checkpoint parameter digest does not verify");
    }
    const auto& n = j.at("obs_norm");
    s.obs_norm.mean = vec_from_json(n.at("mean"));
    s.obs_norm.var = vec_from_json(n.at("var"));
    s.obs_norm.count = n.at("count").get<double>();
    s.obs_norm.clip = n.at("clip").get<double>();
    const auto& rs = j.at("ret_stat");
    s.ret_stat.mean = rs.at(0).get<double>();
    s.ret_stat.var = rs.at(1).get<double>();
    s.ret_stat.count = rs.at(2).get<double>();
    const auto& a = j.at("adam");
    s.adam.m = vec_from_json(a.at("m"));
    s.adam.v = vec_from_json(a.at("v"));
    s.adam.t = a.at("t").get<std::int64_t>();
    s.rng.set_state(j.at("rng").get<std::string>());
    for (const auto& w : j.at("workers")) {
      EnvWorker ew;
      ew.rng.set_state(w.at("rng").get<std::string>());
      ew.obs = vec_from_json(w.at("obs"));
      ew.needs_reset = w.at("needs_reset").get<bool>();
      ew.ret_running = w.at("ret_running").get<double>();
      ew.ep_return = w.at("ep_return").get<double>();
      ew.ep_length = w.at("ep_length").get<int>();
      s.workers.push_back(std::move(ew));
      s.env_states.push_back(w.at("env"));
    }
    s.iteration = j.at("iteration").get<int>();
    s.env_steps = j.at("env_steps").get<std::int64_t>();
    s.report.seed = j.at("report").at("seed").get<std::uint64_t>();
    for (const auto& r : j.at("report").at("iterations")) {
      s.report.iterations.push_back(iteration_from_json(r));
    }
    return s;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const TrainState& s, const PPOConfig& cfg, const std::string& path) {
  write_file(path, train_state_to_json(s, cfg).dump());
}

TrainState load_checkpoint(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return train_state_from_json(j);
}

// --- training ----------------------------------------------------------------------

namespace {

void init_workers(TrainState& s, std::size_t n, std::uint64_t seed) {
  s.workers.assign(n, EnvWorker{});
  for (std::size_t e = 0; e < n; ++e) s.workers[e].rng.seed(seed + e);
  s.env_states.assign(n, json(nullptr));
}

void check_env_dims(const std::vector<Environment*>& envs, int obs_dim, int act_dim) {
  if (envs.empty()) throw ConfigError("training needs at least one environment");
  for (const Environment* env : envs) {
    if (env->obs_dim() != obs_dim || env->action_dim() != act_dim) {
      throw ConfigError("all environments must share observation and action dimensions");
    }
  }
}

}  // namespace

TrainState make_train_state(const std::vector<Environment*>& envs, const PPOConfig& cfg) {
  cfg.validate();
  if (envs.empty()) throw ConfigError("training needs at least one environment");
  TrainState s;
  s.rng.seed(cfg.seed);
  s.params = PolicyParams::init(envs.front()->obs_dim(), envs.front()->action_dim(), cfg.hidden,
                                s.rng, cfg.log_std_init);
  s.obs_norm = RunningNorm::identity(s.params.obs_dim);
  return make_train_state(envs, cfg, s.params, s.obs_norm);
}

TrainState make_train_state(const std::vector<Environment*>& envs, const PPOConfig& cfg,
                            const PolicyParams& params, const RunningNorm& obs_norm) {
  cfg.validate();
  check_env_dims(envs, params.obs_dim, params.act_dim);
  TrainState s;
  s.params = params;
  s.obs_norm = obs_norm;
  s.rng.seed(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  s.adam.reset(params.flat.size());
  s.report.seed = cfg.seed;
  init_workers(s, envs.size(), cfg.seed);
  return s;
}

void train(std::vector<Environment*>& envs, const PPOConfig& cfg, TrainState& state,
           const TrainHooks& hooks) {
  cfg.validate();
  check_env_dims(envs, state.params.obs_dim, state.params.act_dim);
  if (state.workers.size() != envs.size()) {
    throw ConfigError("training state has " + std::to_string(state.workers.size()) +
                      " workers for " + std::to_string(envs.size()) + " environments");
  }
  for (std::size_t e = 0; e < envs.size(); ++e) {
    if (e < state.env_states.size() && !state.env_states[e].is_null()) {
      envs[e]->load_state(state.env_states[e]);
    }
  }
  const auto t0 = std::chrono::steady_clock::now();
  ThreadPool pool(configured_threads());
  auto snapshot = [&] {
    state.env_states.resize(envs.size());
    for (std::size_t e = 0; e < envs.size(); ++e) state.env_states[e] = envs[e]->save_state();
  };
  while (state.env_steps < cfg.total_steps) {
    const double frac = static_cast<double>(state.env_steps) / static_cast<double>(cfg.total_steps);
    const double lr = cfg.anneal_lr ? cfg.lr * (1.0 - frac) : cfg.lr;
    IterationRecord rec;
    RolloutBuffer buf = collect_rollouts(envs, state.workers, state.params, state.obs_norm,
                                         cfg.n_steps, cfg.gamma,
                                         cfg.normalize_reward ? &state.ret_stat : nullptr,
                                         &rec.rollout, &pool);
    if (cfg.normalize_obs) state.obs_norm.update(buf.raw_obs);
    buf.compute_advantages(cfg.gamma, cfg.gae_lambda);
    buf.normalize_advantages();
    try {
      rec.loss = ppo_update(buf, state.params, state.adam, cfg, state.rng, lr);
    } catch (const NumericalError& e) {
      std::string where;
      if (!hooks.checkpoint_path.empty()) {
        snapshot();
        save_checkpoint(state, cfg, hooks.checkpoint_path);
        where = "; last good state written to " + hooks.checkpoint_path;
      }
      throw NumericalError(std::string(e.what()) + " at iteration " +
                           std::to_string(state.iteration) + where);
    }
    ++state.iteration;
    state.env_steps += buf.size();
    rec.iteration = state.iteration;
    rec.env_steps = state.env_steps;
    rec.lr = lr;
    state.report.iterations.push_back(rec);
    if (hooks.on_iteration) hooks.on_iteration(state, rec);
    if (!hooks.checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        state.iteration % cfg.checkpoint_every == 0) {
      snapshot();
      save_checkpoint(state, cfg, hooks.checkpoint_path);
    }
  }
  snapshot();
  state.report.wall_time_s +=
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!hooks.checkpoint_path.empty()) save_checkpoint(state, cfg, hooks.checkpoint_path);
}

StepResult BanditEnv::step(const Vec& action) {
  if (action.size() != 1) throw UsageError("bandit action must have one entry");
  StepResult r;
  const double d = action[0] - target_;
  r.reward = -d * d;
  r.done = true;
  r.obs = Vec::Ones(1);
  return r;
}

Vec Agent::act(const Vec& obs) const {
  return policy_forward(params, obs_norm.apply(obs)).mean;
}

}  // namespace exohand
