#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "diffusesg/common.hpp"

namespace dsg {

// Reverse-mode autodiff over 2-D row-major tensors. Grids are flattened
// position-major (batch, row, col) into matrix rows with channels as columns;
// structural reshapes are row gathers. Creation order is topological, so the
// backward sweep is a reverse walk.
//
// A tape built with grads disabled skips closures and caches and only
// evaluates values (used by sampling).
class Tape {
public:
    explicit Tape(bool grads_enabled = true) : grads_enabled_(grads_enabled) {}

    // Leaves.
    int input(Mat v);                    // constant
    int leaf(Mat v, bool requires_grad); // parameter when requires_grad

    const Mat& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Mat& grad(int id) const;
    // False when the node never received gradient (off the loss path).
    bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad.size() != 0; }
    bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    size_t size() const { return nodes_.size(); }

    // Elementwise and scalar-coefficient ops.
    int add(int a, int b);
    int sub(int a, int b);
    int scale(int a, double s);
    int affine(int a, double s, double c);  // s*x + c
    int mul_elem(int a, int b);
    int clamp(int a, double lo, double hi);
    int gelu(int a);

    // Per-row scalar coefficients (preconditioning, per-sample weights).
    int scale_rows(int a, Vec coef);

    // X (N x in) * W (in x out) + broadcast bias b (1 x out).
    int linear(int x, int w, int b);
    // Rowwise layer norm with learned gain/shift (each 1 x C).
    int layer_norm(int x, int gamma, int beta, double eps = 1e-5);

    // Structure.
    int concat_cols(int a, int b);
    int slice_cols(int a, int from, int len);
    int gather_rows(int a, std::vector<int> idx);
    // out = x; out.row(r) += e.row(map[r]) (broadcast add of per-batch rows).
    int add_gathered_rows(int x, int e, std::vector<int> map);
    // (B*S*S x c) -> (B*(S/2)*(S/2) x 4c); channel blocks ordered by row/col
    // parity (even-even, even-odd, odd-even, odd-odd).
    int parity_merge(int a, int side, int batch);
    // Exact structural inverse: (B*H*H x c) -> (B*2H*2H x c/4).
    int parity_split(int a, int half_side, int batch);

    // Multi-head window self-attention core. q,k,v are (W*T x c) with windows
    // contiguous; c = heads * head_dim. bias_table is ((2M-1)^2 x heads),
    // indexed by bias_index (T*T entries). softmax(scale*Q K^T + B) V per
    // window and head.
    int window_attention(int q, int k, int v, int bias_table,
                         std::shared_ptr<const std::vector<int>> bias_index, int window_len,
                         int heads, double scale);

    // Losses (scalar-valued 1x1 nodes).
    int sum_squares_vs(int a, Mat target);
    // rows of `pred` are cxcywh boxes; returns sum_r w[r] * (1 - GIoU(pred_r, target_r)).
    int giou_loss(int pred, Mat target_boxes, Vec weights);

    void backward(int loss_id);

private:
    struct Node {
        Mat value;
        Mat grad;
        bool requires_grad = false;
        std::function<void(Tape&, int)> back;  // receives this node's id
    };

    int push(Mat value, bool requires_grad, std::function<void(Tape&, int)> back);
    Mat& grad_buf(int id);

    std::vector<Node> nodes_;
    bool grads_enabled_ = true;

    friend struct TapeAccess;
};

// GIoU of two cxcywh boxes with positive extents; in (-1, 1].
double giou(double acx, double acy, double aw, double ah, double bcx, double bcy, double bw,
            double bh);

}  // namespace dsg
