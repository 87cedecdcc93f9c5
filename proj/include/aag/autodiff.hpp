#pragma once

#include "aag/common.hpp"

#include <functional>
#include <vector>

namespace aag::ad {

// Reverse-mode autodiff over dense double matrices. A Tape owns the
// computation graph; ops append nodes and return lightweight Var handles.
// Nodes are created in topological order, so backward() is a single
// reverse sweep over node ids. Everything is single-threaded and
// deterministic.
//
// Ops whose inputs all have requires_grad == false produce constant nodes
// with no backward closure, so inference-only graphs cost no extra work.

class Tape;

struct Var {
    Tape* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
  public:
    Var leaf(const Mat& value) { return push(value, true); }
    Var constant(const Mat& value) { return push(value, false); }

    Var scalar_constant(double x) {
        Mat m(1, 1);
        m(0, 0) = x;
        return constant(m);
    }

    const Mat& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    Mat& grad(Var v) { return nodes_[static_cast<size_t>(v.id)].grad; }
    bool requires_grad(Var v) const {
        return nodes_[static_cast<size_t>(v.id)].requires_grad;
    }

    // Seeds d(root)/d(root) = 1 and sweeps the graph in reverse creation
    // order. root must be 1x1.
    void backward(Var root) {
        if (val(root).rows() != 1 || val(root).cols() != 1) {
            throw InputError("backward root must be a 1x1 scalar");
        }
        for (auto& n : nodes_) {
            n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        }
        nodes_[static_cast<size_t>(root.id)].grad(0, 0) = 1.0;
        for (int id = root.id; id >= 0; --id) {
            auto& n = nodes_[static_cast<size_t>(id)];
            if (n.requires_grad && n.backward) {
                n.backward(*this);
            }
        }
    }

    size_t size() const { return nodes_.size(); }

    Var push(Mat value, bool requires_grad,
             std::function<void(Tape&)> backward = {}) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        Var v;
        v.tape = this;
        v.id = static_cast<int>(nodes_.size()) - 1;
        return v;
    }

  private:
    struct Node {
        Mat value;
        Mat grad;
        std::function<void(Tape&)> backward;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
};

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var hadamard(Var a, Var b);
Var matmul(Var a, Var b);
// A * B^T without materializing the transpose as a node.
Var matmul_nt(Var a, Var b);
// (n x d) + broadcast of a (1 x d) row over all n rows.
Var add_row_broadcast(Var a, Var row);
Var relu(Var a);
// Row-wise softmax; additive_mask (same shape, 0 or -inf) is applied to the
// logits first. Rows must keep at least one unmasked entry.
Var row_softmax(Var a, const Mat* additive_mask = nullptr);
// Row-wise layer norm with learned gain/shift (both 1 x d).
Var layer_norm(Var x, Var gain, Var shift, double eps = 1e-5);
// Gathers rows of `table` by token id; backward scatter-adds.
Var embedding(Var table, const std::vector<int>& ids);
Var concat_rows(Tape& tape, const std::vector<Var>& parts);
Var concat_cols(Tape& tape, const std::vector<Var>& parts);
Var slice_rows(Var a, int row0, int nrows);
Var slice_cols(Var a, int col0, int ncols);
// Mean over rows, result 1 x d.
Var mean_rows(Var a);
// Row-major reinterpretation to (rows x cols); element count must match.
Var reshape_rowmajor(Var a, int rows, int cols);

// Mean token-level NLL over unmasked rows. mask[i] != 0 keeps row i; an
// empty mask keeps everything. Throws DataError when no row survives.
Var cross_entropy(Var logits, const std::vector<int>& targets,
                  const std::vector<uint8_t>& mask = {});
// Mean CE of the student distribution against softmax(teacher/T); both
// sides are softened at the same temperature. Teacher side is constant.
Var soft_cross_entropy(Var student_logits, const Mat& teacher_logits,
                       const std::vector<uint8_t>& mask, double temperature);
// Mean over unmasked rows of -cos(student_row, teacher_row). Rows where
// either side has (near-)zero norm contribute cosine 0; their count is
// reported through zero_norm_rows when given.
Var neg_cosine_rows(Var student, const Mat& teacher,
                    const std::vector<uint8_t>& mask = {},
                    int* zero_norm_rows = nullptr);
// Mean squared elementwise difference against a constant target.
Var mse_against(Var student, const Mat& teacher);

}  // namespace aag::ad
