#include "diffusesg/tape.hpp"

#include <cmath>
#include <utility>

namespace dsg {

struct TapeAccess {
    static Mat& grad(Tape& t, int id) { return t.grad_buf(id); }
    static const Mat& val(Tape& t, int id) { return t.nodes_[static_cast<size_t>(id)].value; }
    static bool needs(Tape& t, int id) { return t.nodes_[static_cast<size_t>(id)].requires_grad; }
};

namespace {
using TA = TapeAccess;
}

int Tape::push(Mat value, bool requires_grad, std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grads_enabled_;
    if (n.requires_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Mat& Tape::grad_buf(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

const Mat& Tape::grad(int id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    check_contract(n.grad.size() != 0, "grad read before backward");
    return n.grad;
}

int Tape::input(Mat v) { return push(std::move(v), false, {}); }

int Tape::leaf(Mat v, bool requires_grad) { return push(std::move(v), requires_grad, {}); }

int Tape::add(int a, int b) {
    check_contract(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
                   "add: shape mismatch");
    Mat out = value(a) + value(b);
    return push(std::move(out), requires_grad(a) || requires_grad(b), [a, b](Tape& t, int self) {
        const Mat& g = TA::grad(t, self);
        if (TA::needs(t, a)) TA::grad(t, a) += g;
        if (TA::needs(t, b)) TA::grad(t, b) += g;
    });
}

int Tape::sub(int a, int b) {
    check_contract(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
                   "sub: shape mismatch");
    Mat out = value(a) - value(b);
    return push(std::move(out), requires_grad(a) || requires_grad(b), [a, b](Tape& t, int self) {
        const Mat& g = TA::grad(t, self);
        if (TA::needs(t, a)) TA::grad(t, a) += g;
        if (TA::needs(t, b)) TA::grad(t, b) -= g;
    });
}

int Tape::scale(int a, double s) { return affine(a, s, 0.0); }

int Tape::affine(int a, double s, double c) {
    Mat out = value(a).array() * s + c;
    return push(std::move(out), requires_grad(a), [a, s](Tape& t, int self) {
        if (TA::needs(t, a)) TA::grad(t, a) += TA::grad(t, self) * s;
    });
}

int Tape::mul_elem(int a, int b) {
    check_contract(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(),
                   "mul_elem: shape mismatch");
    Mat out = value(a).cwiseProduct(value(b));
    return push(std::move(out), requires_grad(a) || requires_grad(b), [a, b](Tape& t, int self) {
        const Mat& g = TA::grad(t, self);
        if (TA::needs(t, a)) TA::grad(t, a) += g.cwiseProduct(TA::val(t, b));
        if (TA::needs(t, b)) TA::grad(t, b) += g.cwiseProduct(TA::val(t, a));
    });
}

int Tape::clamp(int a, double lo, double hi) {
    Mat out = value(a).array().max(lo).min(hi);
    return push(std::move(out), requires_grad(a), [a, lo, hi](Tape& t, int self) {
        if (!TA::needs(t, a)) return;
        const Mat& x = TA::val(t, a);
        const Mat& g = TA::grad(t, self);
        Mat& ga = TA::grad(t, a);
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j)
                if (x(i, j) > lo && x(i, j) < hi) ga(i, j) += g(i, j);
    });
}

int Tape::gelu(int a) {
    const Mat& x = value(a);
    Mat out(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i)
        out.data()[i] = 0.5 * x.data()[i] * (1.0 + std::erf(x.data()[i] * M_SQRT1_2));
    return push(std::move(out), requires_grad(a), [a](Tape& t, int self) {
        if (!TA::needs(t, a)) return;
        const Mat& x = TA::val(t, a);
        const Mat& g = TA::grad(t, self);
        Mat& ga = TA::grad(t, a);
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            const double v = x.data()[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            ga.data()[i] += g.data()[i] * (cdf + v * pdf);
        }
    });
}

int Tape::scale_rows(int a, Vec coef) {
    check_contract(coef.size() == value(a).rows(), "scale_rows: coef length mismatch");
    Mat out = coef.asDiagonal() * value(a);
    auto c = std::make_shared<Vec>(std::move(coef));
    return push(std::move(out), requires_grad(a), [a, c](Tape& t, int self) {
        if (TA::needs(t, a)) TA::grad(t, a) += c->asDiagonal() * TA::grad(t, self);
    });
}

int Tape::linear(int x, int w, int b) {
    const Mat& X = value(x);
    const Mat& W = value(w);
    const Mat& B = value(b);
    check_contract(X.cols() == W.rows(), "linear: inner dim mismatch");
    check_contract(B.rows() == 1 && B.cols() == W.cols(), "linear: bias shape");
    Mat out = X * W;
    out.rowwise() += B.row(0);
    return push(std::move(out), requires_grad(x) || requires_grad(w) || requires_grad(b),
                [x, w, b](Tape& t, int self) {
                    const Mat& g = TA::grad(t, self);
                    if (TA::needs(t, x)) TA::grad(t, x).noalias() += g * TA::val(t, w).transpose();
                    if (TA::needs(t, w)) TA::grad(t, w).noalias() += TA::val(t, x).transpose() * g;
                    if (TA::needs(t, b)) TA::grad(t, b).row(0) += g.colwise().sum();
                });
}

int Tape::layer_norm(int x, int gamma, int beta, double eps) {
    const Mat& X = value(x);
    const Eigen::Index C = X.cols();
    check_contract(value(gamma).cols() == C && value(beta).cols() == C, "layer_norm: param width");
    Mat xhat(X.rows(), C);
    Vec inv_std(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
        const double mu = X.row(r).mean();
        const double var = (X.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (X.row(r).array() - mu) * inv_std(r);
    }
    Mat out = xhat;
    out.array().rowwise() *= value(gamma).row(0).array();
    out.rowwise() += value(beta).row(0);
    auto cache_xhat = std::make_shared<Mat>(std::move(xhat));
    auto cache_inv = std::make_shared<Vec>(std::move(inv_std));
    return push(std::move(out), requires_grad(x) || requires_grad(gamma) || requires_grad(beta),
                [x, gamma, beta, cache_xhat, cache_inv](Tape& t, int self) {
                    const Mat& g = TA::grad(t, self);
                    const Mat& xh = *cache_xhat;
                    if (TA::needs(t, beta)) TA::grad(t, beta).row(0) += g.colwise().sum();
                    if (TA::needs(t, gamma))
                        TA::grad(t, gamma).row(0) += g.cwiseProduct(xh).colwise().sum();
                    if (!TA::needs(t, x)) return;
                    const auto gamma_row = TA::val(t, gamma).row(0);
                    Mat& gx = TA::grad(t, x);
                    const double invC = 1.0 / static_cast<double>(xh.cols());
                    for (Eigen::Index r = 0; r < xh.rows(); ++r) {
                        // dxhat = g .* gamma; dx = inv_std*(dxhat - mean(dxhat)
                        //          - xhat * mean(dxhat .* xhat))
                        Eigen::RowVectorXd dxhat =
                            g.row(r).cwiseProduct(gamma_row);
                        const double m1 = dxhat.sum() * invC;
                        const double m2 = dxhat.cwiseProduct(xh.row(r)).sum() * invC;
                        gx.row(r) += (*cache_inv)(r) *
                                     (dxhat.array() - m1 - xh.row(r).array() * m2).matrix();
                    }
                });
}

int Tape::concat_cols(int a, int b) {
    const Mat& A = value(a);
    const Mat& B = value(b);
    check_contract(A.rows() == B.rows(), "concat_cols: row mismatch");
    Mat out(A.rows(), A.cols() + B.cols());
    out.leftCols(A.cols()) = A;
    out.rightCols(B.cols()) = B;
    const Eigen::Index ac = A.cols();
    return push(std::move(out), requires_grad(a) || requires_grad(b),
                [a, b, ac](Tape& t, int self) {
                    const Mat& g = TA::grad(t, self);
                    if (TA::needs(t, a)) TA::grad(t, a) += g.leftCols(ac);
                    if (TA::needs(t, b)) TA::grad(t, b) += g.rightCols(g.cols() - ac);
                });
}

int Tape::slice_cols(int a, int from, int len) {
    check_contract(from >= 0 && len >= 0 && from + len <= value(a).cols(), "slice_cols: range");
    Mat out = value(a).middleCols(from, len);
    return push(std::move(out), requires_grad(a), [a, from, len](Tape& t, int self) {
        if (TA::needs(t, a)) TA::grad(t, a).middleCols(from, len) += TA::grad(t, self);
    });
}

int Tape::gather_rows(int a, std::vector<int> idx) {
    const Mat& A = value(a);
    Mat out(static_cast<Eigen::Index>(idx.size()), A.cols());
    for (size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = A.row(idx[r]);
    auto map = std::make_shared<std::vector<int>>(std::move(idx));
    return push(std::move(out), requires_grad(a), [a, map](Tape& t, int self) {
        if (!TA::needs(t, a)) return;
        const Mat& g = TA::grad(t, self);
        Mat& ga = TA::grad(t, a);
        for (size_t r = 0; r < map->size(); ++r)
            ga.row((*map)[r]) += g.row(static_cast<Eigen::Index>(r));
    });
}

int Tape::add_gathered_rows(int x, int e, std::vector<int> map) {
    const Mat& X = value(x);
    const Mat& E = value(e);
    check_contract(static_cast<Eigen::Index>(map.size()) == X.rows(), "add_gathered_rows: map size");
    check_contract(E.cols() == X.cols(), "add_gathered_rows: width mismatch");
    Mat out = X;
    for (Eigen::Index r = 0; r < out.rows(); ++r) out.row(r) += E.row(map[static_cast<size_t>(r)]);
    auto m = std::make_shared<std::vector<int>>(std::move(map));
    return push(std::move(out), requires_grad(x) || requires_grad(e), [x, e, m](Tape& t, int self) {
        const Mat& g = TA::grad(t, self);
        if (TA::needs(t, x)) TA::grad(t, x) += g;
        if (TA::needs(t, e)) {
            Mat& ge = TA::grad(t, e);
            for (Eigen::Index r = 0; r < g.rows(); ++r)
                ge.row((*m)[static_cast<size_t>(r)]) += g.row(r);
        }
    });
}

namespace {

// Row index maps for the parity rearrangements. Downsampling stacks the four
// row/col parity phases along channels; upsampling is the exact inverse.
std::vector<int> parity_gather_indices(int side, int batch, int phase) {
    const int half = side / 2;
    const int pi = phase >> 1;
    const int pj = phase & 1;
    std::vector<int> idx;
    idx.reserve(static_cast<size_t>(batch) * half * half);
    for (int b = 0; b < batch; ++b)
        for (int i = 0; i < half; ++i)
            for (int j = 0; j < half; ++j)
                idx.push_back(b * side * side + (2 * i + pi) * side + (2 * j + pj));
    return idx;
}

}  // namespace

int Tape::parity_merge(int a, int side, int batch) {
    const Mat& A = value(a);
    check_contract(side % 2 == 0, "parity_merge: odd side");
    check_contract(A.rows() == static_cast<Eigen::Index>(batch) * side * side,
                   "parity_merge: row count");
    const int half = side / 2;
    const Eigen::Index c = A.cols();
    Mat out(static_cast<Eigen::Index>(batch) * half * half, 4 * c);
    std::vector<std::vector<int>> idx(4);
    for (int phase = 0; phase < 4; ++phase) {
        idx[static_cast<size_t>(phase)] = parity_gather_indices(side, batch, phase);
        const auto& map = idx[static_cast<size_t>(phase)];
        for (size_t r = 0; r < map.size(); ++r)
            out.block(static_cast<Eigen::Index>(r), phase * c, 1, c) = A.row(map[r]);
    }
    auto maps = std::make_shared<std::vector<std::vector<int>>>(std::move(idx));
    return push(std::move(out), requires_grad(a), [a, maps, c](Tape& t, int self) {
        if (!TA::needs(t, a)) return;
        const Mat& g = TA::grad(t, self);
        Mat& ga = TA::grad(t, a);
        for (int phase = 0; phase < 4; ++phase) {
            const auto& map = (*maps)[static_cast<size_t>(phase)];
            for (size_t r = 0; r < map.size(); ++r)
                ga.row(map[r]) += g.block(static_cast<Eigen::Index>(r), phase * c, 1, c);
        }
    });
}

int Tape::parity_split(int a, int half_side, int batch) {
    const Mat& A = value(a);
    check_contract(A.cols() % 4 == 0, "parity_split: channels not divisible by 4");
    check_contract(A.rows() == static_cast<Eigen::Index>(batch) * half_side * half_side,
                   "parity_split: row count");
    const int side = 2 * half_side;
    const Eigen::Index c = A.cols() / 4;
    Mat out(static_cast<Eigen::Index>(batch) * side * side, c);
    std::vector<std::vector<int>> idx(4);
    for (int phase = 0; phase < 4; ++phase) {
        idx[static_cast<size_t>(phase)] = parity_gather_indices(side, batch, phase);
        const auto& map = idx[static_cast<size_t>(phase)];
        for (size_t r = 0; r < map.size(); ++r)
            out.row(map[r]) = A.block(static_cast<Eigen::Index>(r), phase * c, 1, c);
    }
    auto maps = std::make_shared<std::vector<std::vector<int>>>(std::move(idx));
    return push(std::move(out), requires_grad(a), [a, maps, c](Tape& t, int self) {
        if (!TA::needs(t, a)) return;
        const Mat& g = TA::grad(t, self);
        Mat& ga = TA::grad(t, a);
        for (int phase = 0; phase < 4; ++phase) {
            const auto& map = (*maps)[static_cast<size_t>(phase)];
            for (size_t r = 0; r < map.size(); ++r)
                ga.block(static_cast<Eigen::Index>(r), phase * c, 1, c) += g.row(map[r]);
        }
    });
}

int Tape::window_attention(int q, int k, int v, int bias_table,
                           std::shared_ptr<const std::vector<int>> bias_index, int window_len,
                           int heads, double scale) {
    const Mat& Q = value(q);
    const Mat& K = value(k);
    const Mat& V = value(v);
    check_contract(Q.rows() == K.rows() && Q.rows() == V.rows(), "attention: row mismatch");
    check_contract(Q.cols() == K.cols() && Q.cols() == V.cols(), "attention: width mismatch");
    check_contract(Q.rows() % window_len == 0, "attention: rows not divisible by window");
    check_contract(Q.cols() % heads == 0, "attention: channels not divisible by heads");
    check_contract(static_cast<int>(bias_index->size()) == window_len * window_len,
                   "attention: bias index size");
    const int windows = static_cast<int>(Q.rows()) / window_len;
    const int head_dim = static_cast<int>(Q.cols()) / heads;
    const Mat& table = value(bias_table);
    check_contract(table.cols() == heads, "attention: bias table heads");

    Mat out = Mat::Zero(Q.rows(), Q.cols());
    // Softmax matrices are cached for the backward pass.
    auto cache = std::make_shared<std::vector<Mat>>();
    if (grads_enabled_) cache->reserve(static_cast<size_t>(windows) * heads);

    std::vector<Mat> bias_per_head(static_cast<size_t>(heads), Mat(window_len, window_len));
    for (int h = 0; h < heads; ++h)
        for (int t1 = 0; t1 < window_len; ++t1)
            for (int t2 = 0; t2 < window_len; ++t2)
                bias_per_head[static_cast<size_t>(h)](t1, t2) =
                    table((*bias_index)[static_cast<size_t>(t1) * window_len + t2], h);

    for (int w = 0; w < windows; ++w) {
        const Eigen::Index r0 = static_cast<Eigen::Index>(w) * window_len;
        for (int h = 0; h < heads; ++h) {
            const Eigen::Index c0 = static_cast<Eigen::Index>(h) * head_dim;
            const auto Qw = Q.block(r0, c0, window_len, head_dim);
            const auto Kw = K.block(r0, c0, window_len, head_dim);
            const auto Vw = V.block(r0, c0, window_len, head_dim);
            Mat logits = scale * (Qw * Kw.transpose()) + bias_per_head[static_cast<size_t>(h)];
            // Rowwise softmax, max-shifted.
            Mat A(window_len, window_len);
            for (int t1 = 0; t1 < window_len; ++t1) {
                const double m = logits.row(t1).maxCoeff();
                A.row(t1) = (logits.row(t1).array() - m).exp().matrix();
                A.row(t1) /= A.row(t1).sum();
            }
            out.block(r0, c0, window_len, head_dim).noalias() = A * Vw;
            if (grads_enabled_) cache->push_back(std::move(A));
        }
    }

    const bool needs = requires_grad(q) || requires_grad(k) || requires_grad(v) ||
                       requires_grad(bias_table);
    return push(std::move(out), needs,
                [q, k, v, bias_table, bias_index, window_len, heads, scale, cache](Tape& t,
                                                                                   int self) {
                    const Mat& g = TA::grad(t, self);
                    const Mat& Q = TA::val(t, q);
                    const Mat& K = TA::val(t, k);
                    const Mat& V = TA::val(t, v);
                    const int windows = static_cast<int>(Q.rows()) / window_len;
                    const int head_dim = static_cast<int>(Q.cols()) / heads;
                    for (int w = 0; w < windows; ++w) {
                        const Eigen::Index r0 = static_cast<Eigen::Index>(w) * window_len;
                        for (int h = 0; h < heads; ++h) {
                            const Eigen::Index c0 = static_cast<Eigen::Index>(h) * head_dim;
                            const Mat& A = (*cache)[static_cast<size_t>(w) * heads +
                                                    static_cast<size_t>(h)];
                            const auto Qw = Q.block(r0, c0, window_len, head_dim);
                            const auto Kw = K.block(r0, c0, window_len, head_dim);
                            const auto Vw = V.block(r0, c0, window_len, head_dim);
                            const auto gw = g.block(r0, c0, window_len, head_dim);
                            if (TA::needs(t, v))
                                TA::grad(t, v).block(r0, c0, window_len, head_dim).noalias() +=
                                    A.transpose() * gw;
                            Mat dA = gw * Vw.transpose();
                            // softmax backward: dS = A .* (dA - rowsum(dA .* A))
                            Mat dS(window_len, window_len);
                            for (int t1 = 0; t1 < window_len; ++t1) {
                                const double dot = dA.row(t1).cwiseProduct(A.row(t1)).sum();
                                dS.row(t1) =
                                    (A.row(t1).array() * (dA.row(t1).array() - dot)).matrix();
                            }
                            if (TA::needs(t, q))
                                TA::grad(t, q).block(r0, c0, window_len, head_dim).noalias() +=
                                    scale * (dS * Kw);
                            if (TA::needs(t, k))
                                TA::grad(t, k).block(r0, c0, window_len, head_dim).noalias() +=
                                    scale * (dS.transpose() * Qw);
                            if (TA::needs(t, bias_table)) {
                                Mat& gt = TA::grad(t, bias_table);
                                for (int t1 = 0; t1 < window_len; ++t1)
                                    for (int t2 = 0; t2 < window_len; ++t2)
                                        gt((*bias_index)[static_cast<size_t>(t1) * window_len + t2],
                                           h) += dS(t1, t2);
                            }
                        }
                    }
                });
}

int Tape::sum_squares_vs(int a, Mat target) {
    const Mat& A = value(a);
    check_contract(A.rows() == target.rows() && A.cols() == target.cols(),
                   "sum_squares_vs: shape mismatch");
    Mat out(1, 1);
    out(0, 0) = (A - target).squaredNorm();
    auto tgt = std::make_shared<Mat>(std::move(target));
    return push(std::move(out), requires_grad(a), [a, tgt](Tape& t, int self) {
        if (TA::needs(t, a))
            TA::grad(t, a) += 2.0 * TA::grad(t, self)(0, 0) * (TA::val(t, a) - *tgt);
    });
}

namespace {

struct Corners {
    double x1, x2, y1, y2;
};

Corners to_corners(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cx + 0.5 * w, cy - 0.5 * h, cy + 0.5 * h};
}

// GIoU and its gradient w.r.t. the predicted corner coordinates. Branch
// indicators take strict comparisons; kinks are measure-zero.
double giou_corners(const Corners& p, const Corners& t, double dG[4]) {
    const double iw = std::min(p.x2, t.x2) - std::max(p.x1, t.x1);
    const double ih = std::min(p.y2, t.y2) - std::max(p.y1, t.y1);
    const bool overlap = iw > 0.0 && ih > 0.0;
    const double I = overlap ? iw * ih : 0.0;
    const double ap = (p.x2 - p.x1) * (p.y2 - p.y1);
    const double at = (t.x2 - t.x1) * (t.y2 - t.y1);
    const double U = ap + at - I;
    const double ex1 = std::min(p.x1, t.x1);
    const double ex2 = std::max(p.x2, t.x2);
    const double ey1 = std::min(p.y1, t.y1);
    const double ey2 = std::max(p.y2, t.y2);
    const double C = (ex2 - ex1) * (ey2 - ey1);
    const double G = I / U + U / C - 1.0;
    if (dG == nullptr) return G;

    // Partials of I, U(=Ap+At-I), C in corner order (px1, px2, py1, py2).
    double dI[4] = {0, 0, 0, 0};
    if (overlap) {
        dI[0] = (p.x1 > t.x1) ? -ih : 0.0;
        dI[1] = (p.x2 < t.x2) ? ih : 0.0;
        dI[2] = (p.y1 > t.y1) ? -iw : 0.0;
        dI[3] = (p.y2 < t.y2) ? iw : 0.0;
    }
    const double dAp[4] = {-(p.y2 - p.y1), (p.y2 - p.y1), -(p.x2 - p.x1), (p.x2 - p.x1)};
    double dC[4] = {0, 0, 0, 0};
    dC[0] = (p.x1 < t.x1) ? -(ey2 - ey1) : 0.0;
    dC[1] = (p.x2 > t.x2) ? (ey2 - ey1) : 0.0;
    dC[2] = (p.y1 < t.y1) ? -(ex2 - ex1) : 0.0;
    dC[3] = (p.y2 > t.y2) ? (ex2 - ex1) : 0.0;
    for (int i = 0; i < 4; ++i) {
        const double dU = dAp[i] - dI[i];
        dG[i] = (dI[i] * U - I * dU) / (U * U) + (dU * C - U * dC[i]) / (C * C);
    }
    return G;
}

}  // namespace

double giou(double acx, double acy, double aw, double ah, double bcx, double bcy, double bw,
            double bh) {
    if (!(aw > 0.0 && ah > 0.0 && bw > 0.0 && bh > 0.0))
        throw DataError("giou: boxes must have positive extents");
    return giou_corners(to_corners(acx, acy, aw, ah), to_corners(bcx, bcy, bw, bh), nullptr);
}

int Tape::giou_loss(int pred, Mat target_boxes, Vec weights) {
    const Mat& P = value(pred);
    check_contract(P.cols() == 4 && target_boxes.cols() == 4, "giou_loss: boxes are cxcywh");
    check_contract(P.rows() == target_boxes.rows() && weights.size() == P.rows(),
                   "giou_loss: row mismatch");
    check_contract(P.rows() >= 1, "giou_loss: needs at least one box");
    double loss = 0.0;
    Mat dP = Mat::Zero(P.rows(), 4);
    for (Eigen::Index r = 0; r < P.rows(); ++r) {
        const Corners pc = to_corners(P(r, 0), P(r, 1), P(r, 2), P(r, 3));
        const Corners tc =
            to_corners(target_boxes(r, 0), target_boxes(r, 1), target_boxes(r, 2), target_boxes(r, 3));
        double dG[4];
        const double G = giou_corners(pc, tc, dG);
        loss += weights(r) * (1.0 - G);
        // Chain corners -> cxcywh: px1 = cx - w/2, px2 = cx + w/2, same for y.
        dP(r, 0) = -weights(r) * (dG[0] + dG[1]);
        dP(r, 2) = -weights(r) * 0.5 * (-dG[0] + dG[1]);
        dP(r, 1) = -weights(r) * (dG[2] + dG[3]);
        dP(r, 3) = -weights(r) * 0.5 * (-dG[2] + dG[3]);
    }
    Mat out(1, 1);
    out(0, 0) = loss;
    auto grad_cache = std::make_shared<Mat>(std::move(dP));
    return push(std::move(out), requires_grad(pred), [pred, grad_cache](Tape& t, int self) {
        if (TA::needs(t, pred)) TA::grad(t, pred) += TA::grad(t, self)(0, 0) * *grad_cache;
    });
}

void Tape::backward(int loss_id) {
    check_contract(grads_enabled_, "backward on a grad-disabled tape");
    check_contract(value(loss_id).size() == 1, "backward needs a scalar loss");
    grad_buf(loss_id)(0, 0) = 1.0;
    for (int id = loss_id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.requires_grad || !n.back) continue;
        if (n.grad.size() == 0) continue;  // not on any path to the loss
        n.back(*this, id);
    }
}

}  // namespace dsg
