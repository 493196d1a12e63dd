#pragma once

// Multi-head self-attention augmented with label-embedding cross-attention.
//
// For each head h, with column window [h*d, (h+1)*d):
//   A_h        = Q_h K_h^T / sqrt(d)                       (L+1)x(L+1)
//   SelfAttn_h = softmax_rows(A_h)
//   Al_h       = Ql_h K_h^T / sqrt(d)                      n x (L+1)
//   CoSim_h    = norm(Al_h)^T norm(Al_h)                   (L+1)x(L+1)
//   NewAttn_h  = SelfAttn_h + CoSim_h
//   O_h        = NewAttn_h V_h
// and O concatenates the O_h in head order. norm() scales each row of Al_h
// to unit L2 length; a zero row stays zero. NewAttn rows are deliberately
// not renormalized.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "numlesa/errors.hpp"
#include "numlesa/matrix.hpp"

namespace numlesa {

struct LesaParams {
  Matrix w_k;
  Matrix w_q;
  Matrix w_v;
  std::size_t heads = 1;

  std::size_t dim() const { return w_q.rows(); }
  std::size_t head_dim() const { return heads == 0 ? 0 : dim() / heads; }

  void validate() const {
    const std::size_t d_model = w_q.rows();
    for (const Matrix* w : {&w_k, &w_q, &w_v})
      if (w->rows() != d_model || w->cols() != d_model)
        throw ShapeError("LESA weights must all be DxD, got " + w->shape_str());
    if (heads == 0 || d_model % heads != 0)
      throw ShapeError("model dimension " + std::to_string(d_model) +
                       " is not divisible by head count " + std::to_string(heads));
  }
};

struct LesaOptions {
  bool use_cosim = true;
  // One flag per row of X; false marks padding. Empty means all valid.
  std::vector<std::uint8_t> key_mask;
};

inline constexpr double kMaskedScore = -1e9;

struct LesaHeadActivations {
  Matrix k, q, v;        // (L+1) x d
  Matrix kl, ql, vl;     // n x d
  Matrix scores;         // A_h
  Matrix self_attn;      // softmax(A_h)
  Matrix label_scores;   // Al_h, masked columns zeroed
  Matrix label_norm;     // norm(Al_h)
  std::vector<double> label_row_norms;
  Matrix cosim;
  Matrix new_attn;
  Matrix out;            // O_h
};

struct LesaActivations {
  Matrix x;
  Matrix xl;
  std::size_t heads = 1;
  LesaOptions options;
  std::vector<LesaHeadActivations> head;
  Matrix out;
};

struct LesaGradients {
  Matrix x, xl, w_k, w_q, w_v;
};

namespace detail {

inline void softmax_rows_inplace(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : r) mx = std::max(mx, v);
    if (!std::isfinite(mx)) throw NumericalError("softmax row " + std::to_string(i) +
                                                 " has no finite entry");
    double total = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      total += v;
    }
    for (double& v : r) v /= total;
  }
}

inline bool key_valid(const LesaOptions& opt, std::size_t j) {
  return opt.key_mask.empty() || opt.key_mask[j] != 0;
}

}  // namespace detail

inline LesaActivations lesa_forward(const Matrix& x, const Matrix& xl, const LesaParams& params,
                                    LesaOptions options = {}) {
  params.validate();
  const std::size_t d_model = params.dim();
  if (x.cols() != d_model || xl.cols() != d_model)
    throw ShapeError("LESA inputs must have " + std::to_string(d_model) + " columns, got X " +
                     x.shape_str() + " and X_l " + xl.shape_str());
  if (x.rows() < 2) throw ShapeError("X needs the sentinel row plus at least one token");
  if (xl.rows() < 1) throw ShapeError("X_l needs at least one label row");
  if (!options.key_mask.empty() && options.key_mask.size() != x.rows())
    throw ShapeError("key mask length does not match X rows");

  const std::size_t rows = x.rows();
  const std::size_t d = params.head_dim();
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));

  const Matrix k_full = matmul(x, params.w_k);
  const Matrix q_full = matmul(x, params.w_q);
  const Matrix v_full = matmul(x, params.w_v);
  const Matrix kl_full = matmul(xl, params.w_k);
  const Matrix ql_full = matmul(xl, params.w_q);
  const Matrix vl_full = matmul(xl, params.w_v);

  LesaActivations act;
  act.x = x;
  act.xl = xl;
  act.heads = params.heads;
  act.options = std::move(options);
  act.out = Matrix(rows, d_model);
  act.head.resize(params.heads);

  for (std::size_t h = 0; h < params.heads; ++h) {
    auto& a = act.head[h];
    const std::size_t c0 = h * d;
    a.k = column_slice(k_full, c0, d);
    a.q = column_slice(q_full, c0, d);
    a.v = column_slice(v_full, c0, d);
    a.kl = column_slice(kl_full, c0, d);
    a.ql = column_slice(ql_full, c0, d);
    a.vl = column_slice(vl_full, c0, d);

    a.scores = matmul_nt(a.q, a.k);
    a.scores *= inv_scale;
    a.self_attn = a.scores;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < rows; ++j)
        if (!detail::key_valid(act.options, j)) a.self_attn(i, j) = kMaskedScore;
    detail::softmax_rows_inplace(a.self_attn);

    a.label_scores = matmul_nt(a.ql, a.k);
    a.label_scores *= inv_scale;
    for (std::size_t i = 0; i < a.label_scores.rows(); ++i)
      for (std::size_t j = 0; j < rows; ++j)
        if (!detail::key_valid(act.options, j)) a.label_scores(i, j) = 0.0;

    a.label_norm = a.label_scores;
    a.label_row_norms.assign(a.label_scores.rows(), 0.0);
    for (std::size_t i = 0; i < a.label_norm.rows(); ++i) {
      auto r = a.label_norm.row(i);
      double ss = 0.0;
      for (double v : r) ss += v * v;
      const double nrm = std::sqrt(ss);
      a.label_row_norms[i] = nrm;
      if (nrm > 0.0)
        for (double& v : r) v /= nrm;
    }

    if (act.options.use_cosim) {
      a.cosim = matmul_tn(a.label_norm, a.label_norm);
      a.new_attn = a.self_attn + a.cosim;
    } else {
      a.cosim = Matrix(rows, rows);
      a.new_attn = a.self_attn;
    }
    a.out = matmul(a.new_attn, a.v);
    set_column_slice(act.out, c0, a.out);
  }
  return act;
}

inline LesaGradients lesa_backward(const LesaActivations& act, const LesaParams& params,
                                   const Matrix& upstream) {
  params.validate();
  const std::size_t rows = act.x.rows();
  const std::size_t d_model = params.dim();
  const std::size_t d = params.head_dim();
  if (upstream.rows() != rows || upstream.cols() != d_model)
    throw ShapeError("upstream gradient must be " + act.out.shape_str() + ", got " +
                     upstream.shape_str());
  if (act.head.size() != params.heads) throw ShapeError("activations/params head mismatch");
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d));

  Matrix dq_full(rows, d_model), dk_full(rows, d_model), dv_full(rows, d_model);
  Matrix dql_full(act.xl.rows(), d_model);

  for (std::size_t h = 0; h < params.heads; ++h) {
    const auto& a = act.head[h];
    const std::size_t c0 = h * d;
    const Matrix d_out = column_slice(upstream, c0, d);

    const Matrix d_new = matmul_nt(d_out, a.v);
    const Matrix dv = matmul_tn(a.new_attn, d_out);

    // softmax backward: dA_ij = S_ij (dS_ij - sum_k dS_ik S_ik)
    Matrix d_scores(rows, rows);
    for (std::size_t i = 0; i < rows; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < rows; ++j) dot += d_new(i, j) * a.self_attn(i, j);
      for (std::size_t j = 0; j < rows; ++j)
        d_scores(i, j) = a.self_attn(i, j) * (d_new(i, j) - dot);
    }
    d_scores *= inv_scale;

    Matrix dq = matmul(d_scores, a.k);
    Matrix dk = matmul_tn(d_scores, a.q);

    if (act.options.use_cosim) {
      // CoSim = N^T N  =>  dN = N (dC + dC^T)
      Matrix sym = d_new + transpose(d_new);
      Matrix d_norm = matmul(a.label_norm, sym);
      Matrix d_label(a.label_norm.rows(), rows);
      for (std::size_t i = 0; i < d_label.rows(); ++i) {
        const double nrm = a.label_row_norms[i];
        if (nrm == 0.0) continue;
        double dot = 0.0;
        for (std::size_t j = 0; j < rows; ++j) dot += a.label_norm(i, j) * d_norm(i, j);
        for (std::size_t j = 0; j < rows; ++j) {
          if (!detail::key_valid(act.options, j)) continue;
          d_label(i, j) = (d_norm(i, j) - a.label_norm(i, j) * dot) / nrm;
        }
      }
      d_label *= inv_scale;
      add_column_slice(dql_full, c0, matmul(d_label, a.k));
      dk += matmul_tn(d_label, a.ql);
    }

    add_column_slice(dq_full, c0, dq);
    add_column_slice(dk_full, c0, dk);
    add_column_slice(dv_full, c0, dv);
  }

  LesaGradients g;
  g.w_q = matmul_tn(act.x, dq_full) + matmul_tn(act.xl, dql_full);
  g.w_k = matmul_tn(act.x, dk_full);
  g.w_v = matmul_tn(act.x, dv_full);
  g.x = matmul_nt(dq_full, params.w_q) + matmul_nt(dk_full, params.w_k) +
        matmul_nt(dv_full, params.w_v);
  g.xl = matmul_nt(dql_full, params.w_q);
  return g;
}

}  // namespace numlesa
