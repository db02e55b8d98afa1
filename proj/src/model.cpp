#include "fade/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "fade/dot.hpp"
#include "fade/errors.hpp"
#include "fade/math.hpp"

namespace fade {

namespace {

constexpr char kCheckpointMagic[8] = {'F', 'A', 'D', 'E', 'C', 'K', 'P', '1'};

void fill_uniform(Rng& rng, std::span<double> out, double scale) {
  for (double& v : out) v = rng.uniform_double(-scale, scale);
}

}  // namespace

void GradientSet::resize(int num_users, int num_items, int dim) {
  num_users_ = num_users;
  num_items_ = num_items;
  dim_ = dim;
  user_data_.assign(static_cast<std::size_t>(num_users) * dim, 0.0);
  item_data_.assign(static_cast<std::size_t>(num_items) * dim, 0.0);
  user_touched_.assign(static_cast<std::size_t>(num_users), 0);
  item_touched_.assign(static_cast<std::size_t>(num_items), 0);
  touched_users_.clear();
  touched_items_.clear();
}

void GradientSet::clear() {
  for (UserId u : touched_users_) {
    std::fill_n(user_data_.data() + static_cast<std::size_t>(u) * dim_, dim_, 0.0);
    user_touched_[static_cast<std::size_t>(u)] = 0;
  }
  for (ItemId i : touched_items_) {
    std::fill_n(item_data_.data() + static_cast<std::size_t>(i) * dim_, dim_, 0.0);
    item_touched_[static_cast<std::size_t>(i)] = 0;
  }
  touched_users_.clear();
  touched_items_.clear();
}

double* GradientSet::user_row(UserId u) {
  if (!user_touched_[static_cast<std::size_t>(u)]) {
    user_touched_[static_cast<std::size_t>(u)] = 1;
    touched_users_.push_back(u);
  }
  return user_data_.data() + static_cast<std::size_t>(u) * dim_;
}

double* GradientSet::item_row(ItemId i) {
  if (!item_touched_[static_cast<std::size_t>(i)]) {
    item_touched_[static_cast<std::size_t>(i)] = 1;
    touched_items_.push_back(i);
  }
  return item_data_.data() + static_cast<std::size_t>(i) * dim_;
}

const double* GradientSet::user_row_if_touched(UserId u) const {
  if (!user_touched_[static_cast<std::size_t>(u)]) return nullptr;
  return user_data_.data() + static_cast<std::size_t>(u) * dim_;
}

const double* GradientSet::item_row_if_touched(ItemId i) const {
  if (!item_touched_[static_cast<std::size_t>(i)]) return nullptr;
  return item_data_.data() + static_cast<std::size_t>(i) * dim_;
}

void GradientSet::add_scaled(const GradientSet& other, double scale) {
  for (UserId u : other.touched_users_) {
    double* dst = user_row(u);
    const double* src = other.user_data_.data() + static_cast<std::size_t>(u) * dim_;
    for (int j = 0; j < dim_; ++j) dst[j] += scale * src[j];
  }
  for (ItemId i : other.touched_items_) {
    double* dst = item_row(i);
    const double* src = other.item_data_.data() + static_cast<std::size_t>(i) * dim_;
    for (int j = 0; j < dim_; ++j) dst[j] += scale * src[j];
  }
}

double GradientSet::dot(const GradientSet& other) const {
  double acc = 0.0;
  for (UserId u : touched_users_) {
    if (!other.user_touched_[static_cast<std::size_t>(u)]) continue;
    const double* a = user_data_.data() + static_cast<std::size_t>(u) * dim_;
    const double* b = other.user_data_.data() + static_cast<std::size_t>(u) * dim_;
    for (int j = 0; j < dim_; ++j) acc += a[j] * b[j];
  }
  for (ItemId i : touched_items_) {
    if (!other.item_touched_[static_cast<std::size_t>(i)]) continue;
    const double* a = item_data_.data() + static_cast<std::size_t>(i) * dim_;
    const double* b = other.item_data_.data() + static_cast<std::size_t>(i) * dim_;
    for (int j = 0; j < dim_; ++j) acc += a[j] * b[j];
  }
  return acc;
}

bool GradientSet::has_non_finite() const {
  for (UserId u : touched_users_) {
    const double* g = user_data_.data() + static_cast<std::size_t>(u) * dim_;
    for (int j = 0; j < dim_; ++j)
      if (!std::isfinite(g[j])) return true;
  }
  for (ItemId i : touched_items_) {
    const double* g = item_data_.data() + static_cast<std::size_t>(i) * dim_;
    for (int j = 0; j < dim_; ++j)
      if (!std::isfinite(g[j])) return true;
  }
  return false;
}

ModelParams init_params(Rng& rng, int num_users, int num_items, int dim, double scale) {
  if (dim < 1) throw ConfigError("init_params: dim must be >= 1");
  if (scale < 0) throw ConfigError("init_params: scale must be >= 0");
  ModelParams p;
  p.num_users = num_users;
  p.num_items = num_items;
  p.dim = dim;
  p.user_emb.resize(static_cast<std::size_t>(num_users) * dim);
  p.item_emb.resize(static_cast<std::size_t>(num_items) * dim);
  fill_uniform(rng, p.user_emb, scale);
  fill_uniform(rng, p.item_emb, scale);
  return p;
}

OptimizerState init_optimizer(const ModelParams& params) {
  OptimizerState s;
  s.m_user.assign(params.user_emb.size(), 0.0);
  s.v_user.assign(params.user_emb.size(), 0.0);
  s.m_item.assign(params.item_emb.size(), 0.0);
  s.v_item.assign(params.item_emb.size(), 0.0);
  s.step = 0;
  return s;
}

double score(const ModelParams& params, UserId user, ItemId item) {
  if (user < 0 || user >= params.num_users) throw std::out_of_range("score: user id out of range");
  if (item < 0 || item >= params.num_items) throw std::out_of_range("score: item id out of range");
  const double* eu = params.user_row(user);
  const double* ei = params.item_row(item);
  double s = 0.0;
  for (int j = 0; j < params.dim; ++j) s += eu[j] * ei[j];
  return s;
}

double bpr_loss_and_grad(const ModelParams& params, std::span<const BprSample> batch,
                         GradientSet& grads) {
  if (batch.empty()) throw std::invalid_argument("bpr_loss_and_grad: empty batch");
  const int d = params.dim;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;
  for (const auto& sample : batch) {
    if (sample.negatives.empty())
      throw std::invalid_argument("bpr_loss_and_grad: sample without negatives");
    const double* eu = params.user_row(sample.user);
    const double* ep = params.item_row(sample.pos_item);
    const double s_pos = dot_rows(eu, ep, d);

    const double inv_neg = 1.0 / static_cast<double>(sample.negatives.size());
    const double w = inv_batch * inv_neg;
    double* gu = grads.user_row(sample.user);
    double* gp = grads.item_row(sample.pos_item);
    for (ItemId neg : sample.negatives) {
      const double* en = params.item_row(neg);
      const double x = s_pos - dot_rows(eu, en, d);
      loss += w * softplus(-x);
      // d/dx of -log sigmoid(x) is -sigmoid(-x)
      const double c = -w * sigmoid(-x);
      double* gn = grads.item_row(neg);
      for (int j = 0; j < d; ++j) {
        gu[j] += c * (ep[j] - en[j]);
        gp[j] += c * eu[j];
        gn[j] -= c * eu[j];
      }
    }
  }
  return loss;
}

namespace {

struct AdamPass {
  const AdamConfig& cfg;
  int d;
  double bc1, bc2;

  void row(double* w, double* m, double* v, const double* g) const {
    for (int j = 0; j < d; ++j) {
      const double gj = g[j] + cfg.l2 * w[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }

  void row_fused(double* w, double* m, double* v, const double* g, const double* extra,
                 double coeff) const {
    for (int j = 0; j < d; ++j) {
      const double gj = g[j] + coeff * extra[j] + cfg.l2 * w[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
};

}  // namespace

void adam_step(OptimizerState& state, ModelParams& params, const GradientSet& grads,
               const AdamConfig& cfg) {
  if (grads.has_non_finite())
    throw std::invalid_argument("adam_step: non-finite gradient, update rejected");
  state.step += 1;
  const AdamPass pass{cfg, params.dim,
                      1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)),
                      1.0 - std::pow(cfg.beta2, static_cast<double>(state.step))};
  const int d = params.dim;
  for (UserId u : grads.touched_users()) {
    const std::size_t off = static_cast<std::size_t>(u) * d;
    pass.row(params.user_emb.data() + off, state.m_user.data() + off, state.v_user.data() + off,
             grads.user_row_if_touched(u));
  }
  for (ItemId i : grads.touched_items()) {
    const std::size_t off = static_cast<std::size_t>(i) * d;
    pass.row(params.item_emb.data() + off, state.m_item.data() + off, state.v_item.data() + off,
             grads.item_row_if_touched(i));
  }
}

void adam_step(OptimizerState& state, ModelParams& params, const GradientSet& grads,
               const GradientSet& extra, double coeff, const AdamConfig& cfg) {
  if (grads.has_non_finite() || extra.has_non_finite())
    throw std::invalid_argument("adam_step: non-finite gradient, update rejected");
  state.step += 1;
  const AdamPass pass{cfg, params.dim,
                      1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)),
                      1.0 - std::pow(cfg.beta2, static_cast<double>(state.step))};
  const int d = params.dim;
  auto extra_user = [&](UserId u) -> const double* { return extra.user_row_if_touched(u); };
  auto extra_item = [&](ItemId i) -> const double* { return extra.item_row_if_touched(i); };
  std::vector<double> zero(static_cast<std::size_t>(d), 0.0);
  for (UserId u : grads.touched_users()) {
    const std::size_t off = static_cast<std::size_t>(u) * d;
    const double* e = extra_user(u);
    pass.row_fused(params.user_emb.data() + off, state.m_user.data() + off,
                   state.v_user.data() + off, grads.user_row_if_touched(u), e ? e : zero.data(),
                   e ? coeff : 0.0);
  }
  for (ItemId i : grads.touched_items()) {
    const std::size_t off = static_cast<std::size_t>(i) * d;
    const double* e = extra_item(i);
    pass.row_fused(params.item_emb.data() + off, state.m_item.data() + off,
                   state.v_item.data() + off, grads.item_row_if_touched(i), e ? e : zero.data(),
                   e ? coeff : 0.0);
  }
  // rows only the extra gradient touched
  for (UserId u : extra.touched_users()) {
    if (grads.user_row_if_touched(u)) continue;
    const std::size_t off = static_cast<std::size_t>(u) * d;
    pass.row_fused(params.user_emb.data() + off, state.m_user.data() + off,
                   state.v_user.data() + off, zero.data(), extra.user_row_if_touched(u), coeff);
  }
  for (ItemId i : extra.touched_items()) {
    if (grads.item_row_if_touched(i)) continue;
    const std::size_t off = static_cast<std::size_t>(i) * d;
    pass.row_fused(params.item_emb.data() + off, state.m_item.data() + off,
                   state.v_item.data() + off, zero.data(), extra.item_row_if_touched(i), coeff);
  }
}

void grow_tables(ModelParams& params, OptimizerState& state, int new_num_users, int new_num_items,
                 Rng& rng, double scale) {
  if (new_num_users < params.num_users || new_num_items < params.num_items)
    throw std::invalid_argument("grow_tables: tables cannot shrink");
  const int d = params.dim;
  const std::size_t old_u = params.user_emb.size();
  const std::size_t old_i = params.item_emb.size();
  params.user_emb.resize(static_cast<std::size_t>(new_num_users) * d);
  params.item_emb.resize(static_cast<std::size_t>(new_num_items) * d);
  fill_uniform(rng, {params.user_emb.data() + old_u, params.user_emb.size() - old_u}, scale);
  fill_uniform(rng, {params.item_emb.data() + old_i, params.item_emb.size() - old_i}, scale);
  params.num_users = new_num_users;
  params.num_items = new_num_items;
  state.m_user.resize(params.user_emb.size(), 0.0);
  state.v_user.resize(params.user_emb.size(), 0.0);
  state.m_item.resize(params.item_emb.size(), 0.0);
  state.v_item.resize(params.item_emb.size(), 0.0);
}

namespace {

void write_bytes(std::ofstream& f, const void* p, std::size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::ifstream& f, void* p, std::size_t n) {
  f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (!f) throw ParseError("checkpoint truncated");
}

void write_doubles(std::ofstream& f, const std::vector<double>& v) {
  write_bytes(f, v.data(), v.size() * sizeof(double));
}

void read_doubles(std::ifstream& f, std::vector<double>& v, std::size_t n) {
  v.resize(n);
  read_bytes(f, v.data(), n * sizeof(double));
}

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params,
                     const OptimizerState& state, const Rng& rng) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot write checkpoint: " + path);
  write_bytes(f, kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::int64_t header[3] = {params.num_users, params.num_items, params.dim};
  write_bytes(f, header, sizeof(header));
  const std::uint64_t step = state.step;
  write_bytes(f, &step, sizeof(step));
  const auto rng_state = rng.state();
  write_bytes(f, rng_state.data(), sizeof(std::uint64_t) * rng_state.size());
  write_doubles(f, params.user_emb);
  write_doubles(f, params.item_emb);
  write_doubles(f, state.m_user);
  write_doubles(f, state.v_user);
  write_doubles(f, state.m_item);
  write_doubles(f, state.v_item);
  if (!f) throw ParseError("short write on checkpoint: " + path);
}

void load_checkpoint(const std::string& path, ModelParams& params, OptimizerState& state,
                     Rng& rng) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open checkpoint: " + path);
  char magic[8];
  read_bytes(f, magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw ParseError("not a checkpoint file: " + path);
  std::int64_t header[3];
  read_bytes(f, header, sizeof(header));
  params.num_users = static_cast<int>(header[0]);
  params.num_items = static_cast<int>(header[1]);
  params.dim = static_cast<int>(header[2]);
  std::uint64_t step = 0;
  read_bytes(f, &step, sizeof(step));
  state.step = step;
  std::array<std::uint64_t, 4> rng_state;
  read_bytes(f, rng_state.data(), sizeof(std::uint64_t) * rng_state.size());
  rng.set_state(rng_state);
  const auto nu = static_cast<std::size_t>(params.num_users) * params.dim;
  const auto ni = static_cast<std::size_t>(params.num_items) * params.dim;
  read_doubles(f, params.user_emb, nu);
  read_doubles(f, params.item_emb, ni);
  read_doubles(f, state.m_user, nu);
  read_doubles(f, state.v_user, nu);
  read_doubles(f, state.m_item, ni);
  read_doubles(f, state.v_item, ni);
}

}  // namespace fade
