#include "cma/spectral.hpp"

#include <fftw3.h>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

namespace cma {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

template <class T>
class AlignedBuffer {
 public:
  explicit AlignedBuffer(std::size_t n) : n_(n), p_(static_cast<T*>(fftw_malloc(sizeof(T) * n))) {
    if (!p_) throw std::bad_alloc();
  }
  ~AlignedBuffer() { fftw_free(p_); }
  AlignedBuffer(const AlignedBuffer&) = delete;
  AlignedBuffer& operator=(const AlignedBuffer&) = delete;
  T* data() { return p_; }
  std::size_t size() const { return n_; }

 private:
  std::size_t n_;
  T* p_;
};

std::size_t half_size(const GridSpec& g) {
  std::size_t s = static_cast<std::size_t>(g.points_per_axis() / 2 + 1);
  for (int a = 0; a + 1 < g.real_dims(); ++a) s *= static_cast<std::size_t>(g.points_per_axis());
  return s;
}

// FFTW's planner is not thread-safe; plans are created once per grid shape under
// a lock and then executed through the new-array interface, which is.
struct Plans {
  fftw_plan r2c;
  fftw_plan c2r;
};

Plans plans_for(const GridSpec& g) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, Plans> cache;
  std::lock_guard lock(mu);
  auto key = std::make_pair(g.complex_dim(), g.points_per_axis());
  if (auto it = cache.find(key); it != cache.end()) return it->second;

  int rank = g.real_dims();
  std::vector<int> dims(rank, g.points_per_axis());
  AlignedBuffer<double> real(g.size());
  AlignedBuffer<fftw_complex> spec(half_size(g));
  // ESTIMATE keeps the chosen algorithm, and hence every rounding, identical across runs.
  Plans p{fftw_plan_dft_r2c(rank, dims.data(), real.data(), spec.data(), FFTW_ESTIMATE),
          fftw_plan_dft_c2r(rank, dims.data(), spec.data(), real.data(),
                            FFTW_ESTIMATE | FFTW_DESTROY_INPUT)};
  cache.emplace(key, p);
  return p;
}

int signed_freq(int j, int N) { return j <= N / 2 ? j : j - N; }

// sym[o][j]: symbol of the o-th real derivative at full-axis index j.
std::vector<std::array<cplx, 5>> symbol_table(int N) {
  std::vector<std::array<cplx, 5>> t(N);
  for (int j = 0; j < N; ++j) {
    int k = signed_freq(j, N);
    cplx ik(0.0, kTwoPi * k);
    cplx acc = 1.0;
    for (int o = 0; o <= 4; ++o) {
      bool drop = (o % 2 == 1) && (2 * std::abs(k) == N);
      t[j][o] = drop ? cplx(0.0) : acc;
      acc *= ik;
    }
  }
  return t;
}

ScalarField c2r(const GridSpec& g, const std::vector<cplx>& half) {
  auto plans = plans_for(g);
  AlignedBuffer<fftw_complex> in(half.size());
  for (std::size_t i = 0; i < half.size(); ++i) {
    in.data()[i][0] = half[i].real();
    in.data()[i][1] = half[i].imag();
  }
  AlignedBuffer<double> out(g.size());
  fftw_execute_dft_c2r(plans.c2r, in.data(), out.data());
  return ScalarField(g, std::vector<double>(out.data(), out.data() + g.size()));
}

// Iterate over every half-spectrum mode with its per-axis indices.
template <class Fn>
void for_each_mode(const GridSpec& g, Fn&& fn) {
  const int d = g.real_dims();
  const int N = g.points_per_axis();
  const int H = N / 2 + 1;
  std::array<int, 4> idx{};
  const std::size_t total = half_size(g);
  for (std::size_t m = 0; m < total; ++m) {
    std::size_t r = m;
    idx[d - 1] = static_cast<int>(r % H);
    r /= H;
    for (int a = d - 2; a >= 0; --a) {
      idx[a] = static_cast<int>(r % N);
      r /= N;
    }
    fn(m, idx);
  }
}

}  // namespace

DiffOp DiffOp::identity() {
  DiffOp op;
  op.terms_.push_back(Term{{0, 0, 0, 0}, 1.0});
  return op;
}

DiffOp DiffOp::real_axis(int axis) {
  DiffOp op;
  Term t{{0, 0, 0, 0}, 1.0};
  t.orders[axis] = 1;
  op.terms_.push_back(t);
  return op;
}

DiffOp DiffOp::dz(int j) {
  return cplx(0.5) * real_axis(2 * j) + cplx(0.0, -0.5) * real_axis(2 * j + 1);
}

DiffOp DiffOp::dzbar(int j) {
  return cplx(0.5) * real_axis(2 * j) + cplx(0.0, 0.5) * real_axis(2 * j + 1);
}

void DiffOp::add(const Term& t) {
  for (auto& e : terms_) {
    if (e.orders == t.orders) {
      e.coef += t.coef;
      return;
    }
  }
  terms_.push_back(t);
}

DiffOp operator*(const DiffOp& a, const DiffOp& b) {
  DiffOp r;
  for (const auto& ta : a.terms_) {
    for (const auto& tb : b.terms_) {
      DiffOp::Term t;
      for (int k = 0; k < 4; ++k) t.orders[k] = ta.orders[k] + tb.orders[k];
      t.coef = ta.coef * tb.coef;
      r.add(t);
    }
  }
  return r;
}

DiffOp operator+(const DiffOp& a, const DiffOp& b) {
  DiffOp r = a;
  for (const auto& t : b.terms_) r.add(t);
  return r;
}

DiffOp operator*(cplx s, const DiffOp& a) {
  DiffOp r = a;
  for (auto& t : r.terms_) t.coef *= s;
  return r;
}

int nyquist(const GridSpec& g) { return g.points_per_axis() / 2; }

Spectrum forward(const ScalarField& u) {
  const GridSpec& g = u.grid();
  auto plans = plans_for(g);
  AlignedBuffer<double> in(g.size());
  std::copy(u.values().begin(), u.values().end(), in.data());
  AlignedBuffer<fftw_complex> out(half_size(g));
  fftw_execute_dft_r2c(plans.r2c, in.data(), out.data());
  const double scale = 1.0 / static_cast<double>(g.size());
  Spectrum s{g, std::vector<cplx>(out.size())};
  for (std::size_t i = 0; i < out.size(); ++i) {
    s.coeffs[i] = cplx(out.data()[i][0], out.data()[i][1]) * scale;
  }
  return s;
}

ScalarField inverse(const Spectrum& s) { return c2r(s.grid, s.coeffs); }

namespace {

// Re- and Im-part multipliers of `op` applied to s.
std::pair<std::vector<cplx>, std::vector<cplx>> split_apply(const Spectrum& s, const DiffOp& op,
                                                            bool want_im) {
  const GridSpec& g = s.grid;
  const int d = g.real_dims();
  for (const auto& t : op.terms()) {
    for (int a = 0; a < 4; ++a) {
      if (t.orders[a] > 4 || (a >= d && t.orders[a] != 0)) {
        throw Error("DiffOp: order too high or axis out of range for this grid");
      }
    }
  }
  auto tab = symbol_table(g.points_per_axis());
  std::vector<cplx> re(s.coeffs.size()), im(want_im ? s.coeffs.size() : 0);
  for_each_mode(g, [&](std::size_t m, const std::array<int, 4>& idx) {
    cplx sr = 0.0, si = 0.0;
    for (const auto& t : op.terms()) {
      cplx sym = 1.0;
      for (int a = 0; a < d; ++a) sym *= tab[idx[a]][t.orders[a]];
      sr += t.coef.real() * sym;
      si += t.coef.imag() * sym;
    }
    re[m] = sr * s.coeffs[m];
    if (want_im) im[m] = si * s.coeffs[m];
  });
  return {std::move(re), std::move(im)};
}

}  // namespace

ComplexField apply(const Spectrum& s, const DiffOp& op) {
  auto [re, im] = split_apply(s, op, true);
  ScalarField r = c2r(s.grid, re);
  ScalarField i = c2r(s.grid, im);
  ComplexField out{s.grid, std::vector<cplx>(s.grid.size())};
  for (std::size_t p = 0; p < out.values.size(); ++p) out.values[p] = cplx(r[p], i[p]);
  return out;
}

ScalarField apply_real(const Spectrum& s, const DiffOp& op) {
  return c2r(s.grid, split_apply(s, op, false).first);
}

ScalarField apply_imag(const Spectrum& s, const DiffOp& op) {
  return c2r(s.grid, split_apply(s, op, true).second);
}

Spectrum inverse_flat_laplacian(const Spectrum& s) {
  const GridSpec& g = s.grid;
  const int d = g.real_dims();
  auto tab = symbol_table(g.points_per_axis());
  Spectrum out{g, std::vector<cplx>(s.coeffs.size())};
  for_each_mode(g, [&](std::size_t m, const std::array<int, 4>& idx) {
    // sum_j d_j d_jbar = (1/4) * Euclidean Laplacian
    double sym = 0.0;
    for (int a = 0; a < d; ++a) sym += 0.25 * tab[idx[a]][2].real();
    out.coeffs[m] = sym == 0.0 ? cplx(0.0) : s.coeffs[m] / sym;
  });
  return out;
}

ComplexField partial_z(const ScalarField& u, int axis) {
  if (axis < 0 || axis >= u.grid().complex_dim()) {
    throw Error("partial_z: axis " + std::to_string(axis) + " out of range");
  }
  return apply(forward(u), DiffOp::dz(axis));
}

ComplexField partial_zbar(const ScalarField& u, int axis) {
  if (axis < 0 || axis >= u.grid().complex_dim()) {
    throw Error("partial_zbar: axis " + std::to_string(axis) + " out of range");
  }
  return apply(forward(u), DiffOp::dzbar(axis));
}

std::vector<ComplexField> complex_gradient(const Spectrum& s) {
  std::vector<ComplexField> out;
  for (int j = 0; j < s.grid.complex_dim(); ++j) out.push_back(apply(s, DiffOp::dz(j)));
  return out;
}

std::vector<ComplexField> complex_gradient(const ScalarField& u) {
  return complex_gradient(forward(u));
}

ComplexMatrixField complex_hessian(const Spectrum& s) {
  const int n = s.grid.complex_dim();
  ComplexMatrixField h(s.grid, n);
  for (int i = 0; i < n; ++i) {
    ScalarField d = apply_real(s, DiffOp::dz(i) * DiffOp::dzbar(i));
    for (std::size_t p = 0; p < d.size(); ++p) h.at(p, i, i) = d[p];
    for (int j = i + 1; j < n; ++j) {
      ComplexField off = apply(s, DiffOp::dz(i) * DiffOp::dzbar(j));
      for (std::size_t p = 0; p < d.size(); ++p) {
        h.at(p, i, j) = off.values[p];
        h.at(p, j, i) = std::conj(off.values[p]);
      }
    }
  }
  return h;
}

ComplexMatrixField complex_hessian(const ScalarField& u) { return complex_hessian(forward(u)); }

ComplexMatrixField holomorphic_hessian(const Spectrum& s) {
  const int n = s.grid.complex_dim();
  ComplexMatrixField h(s.grid, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i; j < n; ++j) {
      ComplexField v = apply(s, DiffOp::dz(i) * DiffOp::dz(j));
      for (std::size_t p = 0; p < v.values.size(); ++p) {
        h.at(p, i, j) = v.values[p];
        h.at(p, j, i) = v.values[p];
      }
    }
  }
  return h;
}

double point_eval(const Spectrum& s, const Coords& x) {
  const GridSpec& g = s.grid;
  const int d = g.real_dims();
  const int N = g.points_per_axis();
  const int H = N / 2 + 1;

  auto basis = [&](int j, double xa) -> cplx {
    // The Nyquist mode is interpolated by cos(pi N x), which keeps the result real.
    if (2 * j == N) return std::cos(std::numbers::pi * N * xa);
    return std::polar(1.0, kTwoPi * signed_freq(j, N) * xa);
  };

  // Contract the half axis first.
  std::size_t outer = s.coeffs.size() / H;
  std::vector<cplx> last(H);
  for (int j = 0; j < H; ++j) {
    double w = (j == 0 || 2 * j == N) ? 1.0 : 2.0;
    last[j] = w * basis(j, x[d - 1]);
  }
  std::vector<cplx> cur(outer);
  for (std::size_t o = 0; o < outer; ++o) {
    cplx acc = 0.0;
    const cplx* c = s.coeffs.data() + o * H;
    for (int j = 0; j < H; ++j) acc += c[j] * last[j];
    cur[o] = acc;
  }
  for (int a = d - 2; a >= 0; --a) {
    std::vector<cplx> e(N);
    for (int j = 0; j < N; ++j) e[j] = basis(j, x[a]);
    std::size_t m = cur.size() / N;
    std::vector<cplx> next(m);
    for (std::size_t o = 0; o < m; ++o) {
      cplx acc = 0.0;
      for (int j = 0; j < N; ++j) acc += cur[o * N + j] * e[j];
      next[o] = acc;
    }
    cur.swap(next);
  }
  return cur[0].real();
}

double point_eval(const ScalarField& u, const Coords& x) { return point_eval(forward(u), x); }

ScalarField resample(const ScalarField& u, int new_points_per_axis) {
  const GridSpec& g = u.grid();
  const int N = g.points_per_axis();
  const int M = new_points_per_axis;
  if (M < N) throw Error("resample: only refinement is supported");
  GridSpec fine(g.complex_dim(), M);
  const int d = g.real_dims();
  const int Hf = M / 2 + 1;
  Spectrum s = forward(u);
  std::vector<cplx> out(half_size(fine), 0.0);

  for_each_mode(g, [&](std::size_t m, const std::array<int, 4>& idx) {
    // Per-axis (target index, weight) choices; a Nyquist mode splits evenly.
    std::array<std::array<std::pair<int, double>, 2>, 4> choice{};
    std::array<int, 4> count{};
    for (int a = 0; a < d; ++a) {
      int j = idx[a];
      bool last = (a == d - 1);
      if (2 * j == N) {
        choice[a][0] = {N / 2, 0.5};
        count[a] = 1;
        if (!last) {
          choice[a][1] = {M - N / 2, 0.5};
          count[a] = 2;
        }
      } else {
        int k = signed_freq(j, N);
        choice[a][0] = {last ? k : (k + M) % M, 1.0};
        count[a] = 1;
      }
    }
    std::array<int, 4> pick{};
    while (true) {
      std::size_t flat = 0;
      double w = 1.0;
      for (int a = 0; a < d; ++a) {
        auto [t, wa] = choice[a][pick[a]];
        flat = flat * (a == d - 1 ? Hf : M) + static_cast<std::size_t>(t);
        w *= wa;
      }
      out[flat] += w * s.coeffs[m];
      int a = d - 1;
      while (a >= 0 && ++pick[a] == count[a]) pick[a--] = 0;
      if (a < 0) break;
    }
  });
  return c2r(fine, out);
}

}  // namespace cma
