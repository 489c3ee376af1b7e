#include "cldpc/scorenet.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>

#include "cldpc/errors.hpp"
#include "cldpc/rng.hpp"

namespace cldpc {

std::string to_string(ModelKind kind) {
  return kind == ModelKind::synchronous ? "synchronous" : "asynchronous";
}

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "synchronous" || s == "sync") return ModelKind::synchronous;
  if (s == "asynchronous" || s == "async") return ModelKind::asynchronous;
  throw ConfigError("unknown model kind: " + s);
}

namespace {

constexpr int kInputChannels = 4;  // w, u, cond, mask

// Offsets of every parameter block inside the flat vector.
struct Layout {
  explicit Layout(const ArchConfig& a) : C(a.channels), E(a.embed_dim), H(a.H), depth(a.depth) {
    std::size_t off = 0;
    auto take = [&off](std::size_t n) {
      const std::size_t at = off;
      off += n;
      return at;
    };
    const auto c = static_cast<std::size_t>(C);
    lift_w = take(c * 3 * kInputChannels);
    lift_b = take(c);
    frame_emb = take(c * static_cast<std::size_t>(H));
    emb_w = take(c * static_cast<std::size_t>(E));
    emb_b = take(c);
    for (int k = 0; k < depth; ++k) {
      sp_w.push_back(take(c * 3 * c));
      sp_b.push_back(take(c));
      lvl_w.push_back(take(c * c));
      tm_w.push_back(take(c * 3 * c));
      tm_b.push_back(take(c));
    }
    out_w = take(2 * 3 * c);
    out_b = take(2);
    total = off;
  }

  int dilation(int k) const {
    int d = 1 << k;
    while (d >= H && d > 1) d >>= 1;
    return std::max(1, d);
  }

  int C, E, H, depth;
  std::size_t lift_w, lift_b, frame_emb, emb_w, emb_b;
  std::vector<std::size_t> sp_w, sp_b, lvl_w, tm_w, tm_b;
  std::size_t out_w, out_b, total;
};

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using CMap = Eigen::Map<const Mat<T>>;
template <typename T>
using MMap = Eigen::Map<Mat<T>>;

template <typename T>
CMap<T> view(std::span<const T> p, std::size_t off, int rows, int cols) {
  return CMap<T>(p.data() + off, rows, cols);
}

template <typename T>
MMap<T> view(std::span<T> p, std::size_t off, int rows, int cols) {
  return MMap<T>(p.data() + off, rows, cols);
}

template <typename T>
Mat<T> silu(const Mat<T>& x) {
  return (x.array() / (T(1) + (-x.array()).exp())).matrix();
}

// d silu / dx = s (1 + x (1 - s)), s = sigmoid(x)
template <typename T>
Mat<T> silu_grad(const Mat<T>& x) {
  const auto s = (T(1) / (T(1) + (-x.array()).exp())).eval();
  return (s * (T(1) + x.array() * (T(1) - s))).matrix();
}

// Stacks [x-1; x; x+1] neighbours within each row of d_x columns; zero padded.
template <typename T>
void im2col_space(const Mat<T>& X, int dx, Mat<T>& out) {
  const Eigen::Index C = X.rows(), P = X.cols();
  out.resize(3 * C, P);
  out.middleRows(C, C) = X;
  for (Eigen::Index seg = 0; seg < P; seg += dx) {
    out.block(0, seg, C, 1).setZero();
    out.block(0, seg + 1, C, dx - 1) = X.block(0, seg, C, dx - 1);
    out.block(2 * C, seg, C, dx - 1) = X.block(0, seg + 1, C, dx - 1);
    out.block(2 * C, seg + dx - 1, C, 1).setZero();
  }
}

template <typename T>
Mat<T> col2im_space(const Mat<T>& G, int dx) {
  const Eigen::Index C = G.rows() / 3, P = G.cols();
  Mat<T> out = G.middleRows(C, C);
  for (Eigen::Index seg = 0; seg < P; seg += dx) {
    out.block(0, seg, C, dx - 1) += G.block(0, seg + 1, C, dx - 1);
    out.block(0, seg + 1, C, dx - 1) += G.block(2 * C, seg, C, dx - 1);
  }
  return out;
}

// Stacks [h-d; h; h+d] frame neighbours within each sample; zero padded.
template <typename T>
void im2col_time(const Mat<T>& X, int H, int dx, int dil, Mat<T>& out) {
  const Eigen::Index C = X.rows(), P = X.cols();
  const Eigen::Index frame = dx, sample = static_cast<Eigen::Index>(H) * dx;
  const Eigen::Index shift = dil * frame;
  out.resize(3 * C, P);
  out.middleRows(C, C) = X;
  for (Eigen::Index s = 0; s < P; s += sample) {
    if (shift >= sample) {
      out.block(0, s, C, sample).setZero();
      out.block(2 * C, s, C, sample).setZero();
      continue;
    }
    out.block(0, s, C, shift).setZero();
    out.block(0, s + shift, C, sample - shift) = X.block(0, s, C, sample - shift);
    out.block(2 * C, s, C, sample - shift) = X.block(0, s + shift, C, sample - shift);
    out.block(2 * C, s + sample - shift, C, shift).setZero();
  }
}

template <typename T>
Mat<T> col2im_time(const Mat<T>& G, int H, int dx, int dil) {
  const Eigen::Index C = G.rows() / 3, P = G.cols();
  const Eigen::Index sample = static_cast<Eigen::Index>(H) * dx, shift = dil * dx;
  Mat<T> out = G.middleRows(C, C);
  if (shift >= sample) return out;
  for (Eigen::Index s = 0; s < P; s += sample) {
    out.block(0, s, C, sample - shift) += G.block(0, s + shift, C, sample - shift);
    out.block(0, s + shift, C, sample - shift) += G.block(2 * C, s, C, sample - shift);
  }
  return out;
}

template <typename T>
Mat<T> level_features(std::span<const int> levels, int E) {
  Mat<T> S(E, static_cast<Eigen::Index>(levels.size()));
  const int half = E / 2;
  for (std::size_t n = 0; n < levels.size(); ++n) {
    const double l = levels[n];
    for (int i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * i / std::max(1, half));
      S(i, static_cast<Eigen::Index>(n)) = static_cast<T>(std::sin(l * f));
      S(half + i, static_cast<Eigen::Index>(n)) = static_cast<T>(std::cos(l * f));
    }
    if (E % 2 == 1) S(E - 1, static_cast<Eigen::Index>(n)) = T(0);
  }
  return S;
}

// Adds per-(sample, frame) column vectors to each of the frame's d_x columns.
template <typename T>
void add_per_frame(Mat<T>& Z, const Mat<T>& F, int dx) {
  for (Eigen::Index n = 0; n < F.cols(); ++n) Z.middleCols(n * dx, dx).colwise() += F.col(n);
}

template <typename T>
Mat<T> sum_per_frame(const Mat<T>& Z, int dx) {
  const Eigen::Index frames = Z.cols() / dx;
  Mat<T> out(Z.rows(), frames);
  for (Eigen::Index n = 0; n < frames; ++n) out.col(n) = Z.middleCols(n * dx, dx).rowwise().sum();
  return out;
}

template <typename T>
struct Activations {
  Mat<T> X_in;
  Mat<T> pre_e, E;
  std::vector<Mat<T>> A;   // A[k] enters block k; A[depth] is the trunk output
  std::vector<Mat<T>> Z2;  // pre-activation after spatial conv + level projection
  std::vector<Mat<T>> T3;  // SiLU(Z2)
  Mat<T> T_out;
  Mat<T> O;
};

template <typename T>
void run_forward(const Layout& L, const ArchConfig& arch, std::span<const T> p,
                 const NetInput<T>& in, Activations<T>& act) {
  const int dx = arch.d_x, H = arch.H, C = L.C, B = in.batch;
  const Eigen::Index frames = static_cast<Eigen::Index>(B) * H;
  const Eigen::Index P = frames * dx;

  act.X_in.resize(kInputChannels, P);
  for (Eigen::Index n = 0; n < frames; ++n) {
    const auto b = static_cast<std::size_t>(n / H);
    const T* win = in.windows.data() + static_cast<std::size_t>(n) * 2 * dx;
    const T* cond = in.cond.data() + b * dx;
    for (int x = 0; x < dx; ++x) {
      const T m = in.obs_mask[static_cast<std::size_t>(x)] ? T(1) : T(0);
      const Eigen::Index col = n * dx + x;
      act.X_in(0, col) = m * win[x];
      act.X_in(1, col) = m * win[dx + x];
      act.X_in(2, col) = m * cond[x];
      act.X_in(3, col) = m;
    }
  }

  const Mat<T> S = level_features<T>(in.levels, L.E);
  act.pre_e = view(p, L.emb_w, C, L.E) * S;
  act.pre_e.colwise() += view(p, L.emb_b, C, 1).col(0);
  act.E = silu(act.pre_e);

  Mat<T> cols;
  im2col_space(act.X_in, dx, cols);
  act.A.assign(static_cast<std::size_t>(L.depth) + 1, Mat<T>());
  act.Z2.assign(static_cast<std::size_t>(L.depth), Mat<T>());
  act.T3.assign(static_cast<std::size_t>(L.depth), Mat<T>());
  Mat<T>& A0 = act.A[0];
  A0.noalias() = view(p, L.lift_w, C, 3 * kInputChannels) * cols;
  A0.colwise() += view(p, L.lift_b, C, 1).col(0);
  {
    const auto fe = view(p, L.frame_emb, C, H);
    for (Eigen::Index n = 0; n < frames; ++n)
      A0.middleCols(n * dx, dx).colwise() += fe.col(n % H);
  }

  for (int k = 0; k < L.depth; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const Mat<T> T1 = silu(act.A[ks]);
    im2col_space(T1, dx, cols);
    Mat<T>& Z2 = act.Z2[ks];
    Z2.noalias() = view(p, L.sp_w[ks], C, 3 * C) * cols;
    Z2.colwise() += view(p, L.sp_b[ks], C, 1).col(0);
    const Mat<T> lvl = view(p, L.lvl_w[ks], C, C) * act.E;
    add_per_frame(Z2, lvl, dx);
    act.T3[ks] = silu(Z2);
    im2col_time(act.T3[ks], H, dx, L.dilation(k), cols);
    Mat<T>& next = act.A[ks + 1];
    next = act.A[ks];
    next.noalias() += view(p, L.tm_w[ks], C, 3 * C) * cols;
    next.colwise() += view(p, L.tm_b[ks], C, 1).col(0);
  }

  act.T_out = silu(act.A.back());
  im2col_space(act.T_out, dx, cols);
  act.O.noalias() = view(p, L.out_w, 2, 3 * C) * cols;
  act.O.colwise() += view(p, L.out_b, 2, 1).col(0);
}

template <typename T>
void write_output(const ArchConfig& arch, const NetInput<T>& in, const Mat<T>& O,
                  std::span<T> out) {
  const int dx = arch.d_x;
  const Eigen::Index frames = static_cast<Eigen::Index>(in.batch) * arch.H;
  for (Eigen::Index n = 0; n < frames; ++n) {
    T* dst = out.data() + static_cast<std::size_t>(n) * 2 * dx;
    for (int x = 0; x < dx; ++x) {
      const bool m = in.obs_mask[static_cast<std::size_t>(x)] != 0;
      dst[x] = m ? O(0, n * dx + x) : T(0);
      dst[dx + x] = m ? O(1, n * dx + x) : T(0);
    }
  }
}

}  // namespace

template <typename T>
std::size_t ScoreNet<T>::param_count(const ArchConfig& arch) {
  return Layout(arch).total;
}

template <typename T>
ScoreNet<T> ScoreNet<T>::init(const ArchConfig& arch, ModelKind kind, std::uint64_t seed) {
  if (arch.H < 1 || arch.d_x < 2 || arch.channels < 1 || arch.depth < 1 || arch.embed_dim < 2)
    throw ConfigError("scorenet: all architecture fields must be positive (d_x >= 2, embed_dim >= 2)");
  ScoreNet net;
  net.arch_ = arch;
  net.kind_ = kind;
  net.seed_ = seed;
  const Layout L(arch);
  net.params_.assign(L.total, T(0));
  Rng rng(seed);
  auto fill = [&](std::size_t off, std::size_t n, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (std::size_t i = 0; i < n; ++i) net.params_[off + i] = static_cast<T>(rng.uniform(-bound, bound));
  };
  const auto C = static_cast<std::size_t>(L.C);
  fill(L.lift_w, C * 3 * kInputChannels, 3.0 * kInputChannels);
  fill(L.lift_b, C, 3.0 * kInputChannels);
  fill(L.frame_emb, C * static_cast<std::size_t>(L.H), static_cast<double>(C));
  fill(L.emb_w, C * static_cast<std::size_t>(L.E), L.E);
  fill(L.emb_b, C, L.E);
  for (int k = 0; k < L.depth; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    fill(L.sp_w[ks], C * 3 * C, 3.0 * static_cast<double>(C));
    fill(L.sp_b[ks], C, 3.0 * static_cast<double>(C));
    fill(L.lvl_w[ks], C * C, static_cast<double>(C));
    fill(L.tm_w[ks], C * 3 * C, 3.0 * static_cast<double>(C));
    fill(L.tm_b[ks], C, 3.0 * static_cast<double>(C));
  }
  // output layer stays zero
  return net;
}

template <typename T>
void ScoreNet<T>::check_input(const NetInput<T>& in) const {
  const auto B = static_cast<std::size_t>(in.batch);
  const auto dx = static_cast<std::size_t>(arch_.d_x);
  if (in.batch < 1) throw ShapeError("scorenet: empty batch");
  if (in.windows.size() != B * window_size())
    throw ShapeError("scorenet: window batch has wrong size");
  if (in.cond.size() != B * dx) throw ShapeError("scorenet: condition state has wrong size");
  if (in.levels.size() != B * static_cast<std::size_t>(arch_.H))
    throw ShapeError("scorenet: level vector length must equal H");
  if (in.obs_mask.size() != dx) throw ShapeError("scorenet: observation mask has wrong size");
  if (params_.size() != Layout(arch_).total) throw ShapeError("scorenet: parameter count mismatch");
}

template <typename T>
void ScoreNet<T>::forward(const NetInput<T>& in, std::span<T> out) const {
  check_input(in);
  if (out.size() != in.windows.size()) throw ShapeError("scorenet: output has wrong size");
  const Layout L(arch_);
  // aligned copy: Eigen's vector peel depends on the address, and with it the sum order
  const Vec<T> pa = Eigen::Map<const Vec<T>>(params_.data(), static_cast<Eigen::Index>(params_.size()));
  Activations<T> act;
  run_forward<T>(L, arch_, std::span<const T>(pa.data(), params_.size()), in, act);
  write_output(arch_, in, act.O, out);
}

template <typename T>
std::vector<T> ScoreNet<T>::forward(std::span<const T> window, std::span<const T> cond_state,
                                    const LevelVector& levels,
                                    std::span<const std::uint8_t> obs_mask) const {
  NetInput<T> in{window, cond_state, levels.levels, obs_mask, 1};
  std::vector<T> out(window.size());
  forward(in, out);
  return out;
}

template <typename T>
T ScoreNet<T>::forward_backward(const NetInput<T>& in, std::span<const T> target_eps,
                                std::span<T> grads) const {
  check_input(in);
  if (target_eps.size() != in.windows.size()) throw ShapeError("scorenet: target has wrong size");
  if (grads.size() != params_.size()) throw ShapeError("scorenet: gradient buffer has wrong size");

  const Layout L(arch_);
  const int dx = arch_.d_x, H = arch_.H, C = L.C;
  const auto n_par = static_cast<Eigen::Index>(params_.size());
  const Vec<T> pa = Eigen::Map<const Vec<T>>(params_.data(), n_par);
  Vec<T> ga = Eigen::Map<const Vec<T>>(grads.data(), n_par);
  std::span<const T> p(pa.data(), params_.size());
  std::span<T> caller_grads = grads;
  grads = std::span<T>(ga.data(), params_.size());
  Activations<T> act;
  run_forward<T>(L, arch_, p, in, act);

  const Eigen::Index frames = static_cast<Eigen::Index>(in.batch) * H;
  const Eigen::Index P = frames * dx;
  std::size_t observed = 0;
  for (auto m : in.obs_mask) observed += m ? 1 : 0;
  const double n_obs = static_cast<double>(frames) * 2.0 * static_cast<double>(observed);
  if (observed == 0) throw ShapeError("scorenet: observation mask hides every cell");

  // dLoss/dO for the masked mean squared error.
  Mat<T> dO = Mat<T>::Zero(2, P);
  double loss = 0.0;
  for (Eigen::Index n = 0; n < frames; ++n) {
    const T* tgt = target_eps.data() + static_cast<std::size_t>(n) * 2 * dx;
    for (int x = 0; x < dx; ++x) {
      if (!in.obs_mask[static_cast<std::size_t>(x)]) continue;
      for (int c = 0; c < 2; ++c) {
        const T r = act.O(c, n * dx + x) - tgt[c * dx + x];
        loss += static_cast<double>(r) * static_cast<double>(r);
        dO(c, n * dx + x) = static_cast<T>(2.0 / n_obs) * r;
      }
    }
  }
  loss /= n_obs;

  std::fill(grads.begin(), grads.end(), T(0));
  Mat<T> cols;

  // Output conv.
  im2col_space(act.T_out, dx, cols);
  view(grads, L.out_w, 2, 3 * C).noalias() += dO * cols.transpose();
  view(grads, L.out_b, 2, 1).col(0) += dO.rowwise().sum();
  Mat<T> dA = col2im_space<T>(view(p, L.out_w, 2, 3 * C).transpose() * dO, dx);
  dA.array() *= silu_grad(act.A.back()).array();

  Mat<T> dE = Mat<T>::Zero(C, frames);
  for (int k = L.depth - 1; k >= 0; --k) {
    const auto ks = static_cast<std::size_t>(k);
    // temporal conv; the residual path passes dA through unchanged
    im2col_time(act.T3[ks], H, dx, L.dilation(k), cols);
    view(grads, L.tm_w[ks], C, 3 * C).noalias() += dA * cols.transpose();
    view(grads, L.tm_b[ks], C, 1).col(0) += dA.rowwise().sum();
    Mat<T> dZ2 = col2im_time<T>(view(p, L.tm_w[ks], C, 3 * C).transpose() * dA, H, dx, L.dilation(k));
    dZ2.array() *= silu_grad(act.Z2[ks]).array();

    // level projection
    const Mat<T> dlvl = sum_per_frame(dZ2, dx);
    view(grads, L.lvl_w[ks], C, C).noalias() += dlvl * act.E.transpose();
    dE.noalias() += view(p, L.lvl_w[ks], C, C).transpose() * dlvl;

    // spatial conv
    const Mat<T> T1 = silu(act.A[ks]);
    im2col_space(T1, dx, cols);
    view(grads, L.sp_w[ks], C, 3 * C).noalias() += dZ2 * cols.transpose();
    view(grads, L.sp_b[ks], C, 1).col(0) += dZ2.rowwise().sum();
    Mat<T> dT1 = col2im_space<T>(view(p, L.sp_w[ks], C, 3 * C).transpose() * dZ2, dx);
    dA.array() += dT1.array() * silu_grad(act.A[ks]).array();
  }

  // lift + frame embedding
  im2col_space(act.X_in, dx, cols);
  view(grads, L.lift_w, C, 3 * kInputChannels).noalias() += dA * cols.transpose();
  view(grads, L.lift_b, C, 1).col(0) += dA.rowwise().sum();
  {
    auto gfe = view(grads, L.frame_emb, C, H);
    const Mat<T> per_frame = sum_per_frame(dA, dx);
    for (Eigen::Index n = 0; n < frames; ++n) gfe.col(n % H) += per_frame.col(n);
  }

  // level MLP
  const Mat<T> dpre = (dE.array() * silu_grad(act.pre_e).array()).matrix();
  const Mat<T> S = level_features<T>(in.levels, L.E);
  view(grads, L.emb_w, C, L.E).noalias() += dpre * S.transpose();
  view(grads, L.emb_b, C, 1).col(0) += dpre.rowwise().sum();

  Eigen::Map<Vec<T>>(caller_grads.data(), n_par) = ga;
  return static_cast<T>(loss);
}

template class ScoreNet<float>;
template class ScoreNet<double>;

}  // namespace cldpc
