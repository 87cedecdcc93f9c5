#include "aag/autodiff.hpp"

#include <cmath>
#include <limits>

namespace aag::ad {

namespace {

void check_same_tape(Var a, Var b) {
    if (a.tape != b.tape) {
        throw InputError("vars belong to different tapes");
    }
}

void check_same_shape(const Mat& a, const Mat& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw InputError(std::string(what) + ": shape mismatch (" +
                         std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " +
                         std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
    }
}

std::vector<uint8_t> expand_mask(Eigen::Index n,
                                 const std::vector<uint8_t>& mask) {
    if (mask.empty()) {
        return std::vector<uint8_t>(static_cast<size_t>(n), 1);
    }
    if (static_cast<Eigen::Index>(mask.size()) != n) {
        throw InputError("mask length does not match row count");
    }
    return mask;
}

// Row-wise softmax of (logits + mask) with the usual max subtraction.
Mat softmax_rows(const Mat& logits, const Mat* additive_mask) {
    Mat z = logits;
    if (additive_mask != nullptr) {
        check_same_shape(z, *additive_mask, "row_softmax mask");
        z += *additive_mask;
    }
    Mat p(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        const double m = z.row(i).maxCoeff();
        if (!std::isfinite(m)) {
            throw DataError("softmax row is fully masked or non-finite");
        }
        Eigen::RowVectorXd e = (z.row(i).array() - m).exp();
        p.row(i) = e / e.sum();
    }
    return p;
}

double row_logsumexp(const Eigen::RowVectorXd& z) {
    const double m = z.maxCoeff();
    return m + std::log((z.array() - m).exp().sum());
}

}  // namespace

Var add(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    check_same_shape(t.val(a), t.val(b), "add");
    Mat out = t.val(a) + t.val(b);
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    if (!rg) {
        return t.constant(std::move(out));
    }
    const int ia = a.id, ib = b.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, ib, io](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        if (tp.requires_grad(Var{&tp, ia})) tp.grad(Var{&tp, ia}) += g;
        if (tp.requires_grad(Var{&tp, ib})) tp.grad(Var{&tp, ib}) += g;
    });
}

Var sub(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    check_same_shape(t.val(a), t.val(b), "sub");
    Mat out = t.val(a) - t.val(b);
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    if (!rg) {
        return t.constant(std::move(out));
    }
    const int ia = a.id, ib = b.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, ib, io](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        if (tp.requires_grad(Var{&tp, ia})) tp.grad(Var{&tp, ia}) += g;
        if (tp.requires_grad(Var{&tp, ib})) tp.grad(Var{&tp, ib}) -= g;
    });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
    Tape& t = *a.tape;
    Mat out = t.val(a) * c;
    if (!t.requires_grad(a)) {
        return t.constant(std::move(out));
    }
    const int ia = a.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, io, c](Tape& tp) {
        tp.grad(Var{&tp, ia}) += c * tp.grad(Var{&tp, io});
    });
}

Var hadamard(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    check_same_shape(t.val(a), t.val(b), "hadamard");
    Mat out = t.val(a).cwiseProduct(t.val(b));
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    if (!rg) {
        return t.constant(std::move(out));
    }
    const int ia = a.id, ib = b.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, ib, io](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        if (tp.requires_grad(Var{&tp, ia})) {
            tp.grad(Var{&tp, ia}) += g.cwiseProduct(tp.val(Var{&tp, ib}));
        }
        if (tp.requires_grad(Var{&tp, ib})) {
            tp.grad(Var{&tp, ib}) += g.cwiseProduct(tp.val(Var{&tp, ia}));
        }
    });
}

Var matmul(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    if (t.val(a).cols() != t.val(b).rows()) {
        throw InputError("matmul: inner dimensions differ");
    }
    Mat out = t.val(a) * t.val(b);
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    if (!rg) {
        return t.constant(std::move(out));
    }
    const int ia = a.id, ib = b.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, ib, io](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        if (tp.requires_grad(Var{&tp, ia})) {
            tp.grad(Var{&tp, ia}) += g * tp.val(Var{&tp, ib}).transpose();
        }
        if (tp.requires_grad(Var{&tp, ib})) {
            tp.grad(Var{&tp, ib}) += tp.val(Var{&tp, ia}).transpose() * g;
        }
    });
}

Var matmul_nt(Var a, Var b) {
    check_same_tape(a, b);
    Tape& t = *a.tape;
    if (t.val(a).cols() != t.val(b).cols()) {
        throw InputError("matmul_nt: inner dimensions differ");
    }
    Mat out = t.val(a) * t.val(b).transpose();
    const bool rg = t.requires_grad(a) || t.requires_grad(b);
    if (!rg) {
        return t.constant(std::move(out));
    }
    const int ia = a.id, ib = b.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, ib, io](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        if (tp.requires_grad(Var{&tp, ia})) {
            tp.grad(Var{&tp, ia}) += g * tp.val(Var{&tp, ib});
        }
        if (tp.requires_grad(Var{&tp, ib})) {
            tp.grad(Var{&tp, ib}) += g.transpose() * tp.val(Var{&tp, ia});
        }
    });
}

Var add_row_broadcast(Var a, Var row) {
    check_same_tape(a, row);
    Tape& t = *a.tape;
    if (t.val(row).rows() != 1 || t.val(row).cols() != t.val(a).cols()) {
        throw InputError("add_row_broadcast: row must be 1 x cols(a)");
    }
    Mat out = t.val(a).rowwise() + t.val(row).row(0);
    const bool rg = t.requires_grad(a) || t.requires_grad(row);
    if (!rg) {
        return t.constant(std::move(out));
    }
    const int ia = a.id, ir = row.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, ir, io](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        if (tp.requires_grad(Var{&tp, ia})) {
            tp.grad(Var{&tp, ia}) += g;
        }
        if (tp.requires_grad(Var{&tp, ir})) {
            tp.grad(Var{&tp, ir}).row(0) += g.colwise().sum();
        }
    });
}

Var relu(Var a) {
    Tape& t = *a.tape;
    Mat out = t.val(a).cwiseMax(0.0);
    if (!t.requires_grad(a)) {
        return t.constant(std::move(out));
    }
    const int ia = a.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, io](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        const Mat& x = tp.val(Var{&tp, ia});
        tp.grad(Var{&tp, ia}) +=
            g.cwiseProduct((x.array() > 0.0).cast<double>().matrix());
    });
}

Var row_softmax(Var a, const Mat* additive_mask) {
    Tape& t = *a.tape;
    Mat p = softmax_rows(t.val(a), additive_mask);
    if (!t.requires_grad(a)) {
        return t.constant(std::move(p));
    }
    const int ia = a.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(p), true, [ia, io](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        const Mat& pv = tp.val(Var{&tp, io});
        Mat& ga = tp.grad(Var{&tp, ia});
        for (Eigen::Index i = 0; i < pv.rows(); ++i) {
            const double dot = g.row(i).dot(pv.row(i));
            ga.row(i) +=
                pv.row(i).cwiseProduct(g.row(i) -
                                       Eigen::RowVectorXd::Constant(
                                           pv.cols(), dot));
        }
    });
}

Var layer_norm(Var x, Var gain, Var shift, double eps) {
    check_same_tape(x, gain);
    check_same_tape(x, shift);
    Tape& t = *x.tape;
    const Mat& xv = t.val(x);
    const Eigen::Index d = xv.cols();
    if (t.val(gain).rows() != 1 || t.val(gain).cols() != d ||
        t.val(shift).rows() != 1 || t.val(shift).cols() != d) {
        throw InputError("layer_norm: gain/shift must be 1 x d");
    }
    Mat xhat(xv.rows(), d);
    Eigen::VectorXd inv_sigma(xv.rows());
    for (Eigen::Index i = 0; i < xv.rows(); ++i) {
        const double mu = xv.row(i).mean();
        const Eigen::RowVectorXd c = xv.row(i).array() - mu;
        const double var = c.squaredNorm() / static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma(i) = is;
        xhat.row(i) = c * is;
    }
    Mat out = (xhat.array().rowwise() * t.val(gain).row(0).array()).matrix();
    out.rowwise() += t.val(shift).row(0);

    const bool rg =
        t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(shift);
    if (!rg) {
        return t.constant(std::move(out));
    }
    const int ix = x.id, ig = gain.id, is = shift.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true,
                  [ix, ig, is, io, xhat, inv_sigma, d](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        if (tp.requires_grad(Var{&tp, ig})) {
            tp.grad(Var{&tp, ig}).row(0) +=
                g.cwiseProduct(xhat).colwise().sum();
        }
        if (tp.requires_grad(Var{&tp, is})) {
            tp.grad(Var{&tp, is}).row(0) += g.colwise().sum();
        }
        if (tp.requires_grad(Var{&tp, ix})) {
            const Eigen::RowVectorXd gainv = tp.val(Var{&tp, ig}).row(0);
            Mat& gx = tp.grad(Var{&tp, ix});
            const double dn = static_cast<double>(d);
            for (Eigen::Index i = 0; i < g.rows(); ++i) {
                // Standard layer-norm backward in terms of xhat:
                // dx = is/d * (d*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
                const Eigen::RowVectorXd dxhat =
                    g.row(i).cwiseProduct(gainv);
                const double s1 = dxhat.sum();
                const double s2 = dxhat.dot(xhat.row(i));
                gx.row(i) += (inv_sigma(i) / dn) *
                             (dn * dxhat -
                              Eigen::RowVectorXd::Constant(g.cols(), s1) -
                              xhat.row(i) * s2);
            }
        }
    });
}

Var embedding(Var table, const std::vector<int>& ids) {
    Tape& t = *table.tape;
    const Mat& tab = t.val(table);
    Mat out(static_cast<Eigen::Index>(ids.size()), tab.cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= tab.rows()) {
            throw InputError("embedding: token id out of range");
        }
        out.row(static_cast<Eigen::Index>(i)) = tab.row(ids[i]);
    }
    if (!t.requires_grad(table)) {
        return t.constant(std::move(out));
    }
    const int it = table.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [it, io, ids](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        Mat& gt = tp.grad(Var{&tp, it});
        for (size_t i = 0; i < ids.size(); ++i) {
            gt.row(ids[i]) += g.row(static_cast<Eigen::Index>(i));
        }
    });
}

Var concat_rows(Tape& tape, const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw InputError("concat_rows: empty part list");
    }
    Eigen::Index rows = 0;
    const Eigen::Index cols = tape.val(parts[0]).cols();
    bool rg = false;
    for (Var p : parts) {
        if (p.tape != &tape) {
            throw InputError("concat_rows: var from another tape");
        }
        if (tape.val(p).cols() != cols) {
            throw InputError("concat_rows: column counts differ");
        }
        rows += tape.val(p).rows();
        rg = rg || tape.requires_grad(p);
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    std::vector<int> ids;
    std::vector<Eigen::Index> offsets;
    for (Var p : parts) {
        const Mat& v = tape.val(p);
        out.middleRows(r, v.rows()) = v;
        ids.push_back(p.id);
        offsets.push_back(r);
        r += v.rows();
    }
    if (!rg) {
        return tape.constant(std::move(out));
    }
    const int io = static_cast<int>(tape.size());
    return tape.push(std::move(out), true, [ids, offsets, io](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        for (size_t i = 0; i < ids.size(); ++i) {
            Var p{&tp, ids[i]};
            if (tp.requires_grad(p)) {
                tp.grad(p) += g.middleRows(offsets[i], tp.val(p).rows());
            }
        }
    });
}

Var concat_cols(Tape& tape, const std::vector<Var>& parts) {
    if (parts.empty()) {
        throw InputError("concat_cols: empty part list");
    }
    const Eigen::Index rows = tape.val(parts[0]).rows();
    Eigen::Index cols = 0;
    bool rg = false;
    for (Var p : parts) {
        if (p.tape != &tape) {
            throw InputError("concat_cols: var from another tape");
        }
        if (tape.val(p).rows() != rows) {
            throw InputError("concat_cols: row counts differ");
        }
        cols += tape.val(p).cols();
        rg = rg || tape.requires_grad(p);
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    std::vector<int> ids;
    std::vector<Eigen::Index> offsets;
    for (Var p : parts) {
        const Mat& v = tape.val(p);
        out.middleCols(c, v.cols()) = v;
        ids.push_back(p.id);
        offsets.push_back(c);
        c += v.cols();
    }
    if (!rg) {
        return tape.constant(std::move(out));
    }
    const int io = static_cast<int>(tape.size());
    return tape.push(std::move(out), true, [ids, offsets, io](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        for (size_t i = 0; i < ids.size(); ++i) {
            Var p{&tp, ids[i]};
            if (tp.requires_grad(p)) {
                tp.grad(p) += g.middleCols(offsets[i], tp.val(p).cols());
            }
        }
    });
}

Var slice_rows(Var a, int row0, int nrows) {
    Tape& t = *a.tape;
    const Mat& v = t.val(a);
    if (row0 < 0 || nrows < 0 || row0 + nrows > v.rows()) {
        throw InputError("slice_rows: range out of bounds");
    }
    Mat out = v.middleRows(row0, nrows);
    if (!t.requires_grad(a)) {
        return t.constant(std::move(out));
    }
    const int ia = a.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, io, row0, nrows](Tape& tp) {
        tp.grad(Var{&tp, ia}).middleRows(row0, nrows) +=
            tp.grad(Var{&tp, io});
    });
}

Var slice_cols(Var a, int col0, int ncols) {
    Tape& t = *a.tape;
    const Mat& v = t.val(a);
    if (col0 < 0 || ncols < 0 || col0 + ncols > v.cols()) {
        throw InputError("slice_cols: range out of bounds");
    }
    Mat out = v.middleCols(col0, ncols);
    if (!t.requires_grad(a)) {
        return t.constant(std::move(out));
    }
    const int ia = a.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, io, col0, ncols](Tape& tp) {
        tp.grad(Var{&tp, ia}).middleCols(col0, ncols) +=
            tp.grad(Var{&tp, io});
    });
}

Var mean_rows(Var a) {
    Tape& t = *a.tape;
    const Mat& v = t.val(a);
    if (v.rows() == 0) {
        throw InputError("mean_rows: empty matrix");
    }
    Mat out = v.colwise().mean();
    if (!t.requires_grad(a)) {
        return t.constant(std::move(out));
    }
    const int ia = a.id;
    const int io = static_cast<int>(t.size());
    const double inv_n = 1.0 / static_cast<double>(v.rows());
    return t.push(std::move(out), true, [ia, io, inv_n](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        Mat& ga = tp.grad(Var{&tp, ia});
        ga.rowwise() += (inv_n * g).row(0);
    });
}

Var reshape_rowmajor(Var a, int rows, int cols) {
    Tape& t = *a.tape;
    const Mat& v = t.val(a);
    if (v.rows() * v.cols() != static_cast<Eigen::Index>(rows) * cols) {
        throw InputError("reshape_rowmajor: element count mismatch");
    }
    Mat out(rows, cols);
    {
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < v.rows(); ++i) {
            for (Eigen::Index j = 0; j < v.cols(); ++j) {
                out(k / cols, k % cols) = v(i, j);
                ++k;
            }
        }
    }
    if (!t.requires_grad(a)) {
        return t.constant(std::move(out));
    }
    const int ia = a.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [ia, io, cols](Tape& tp) {
        const Mat& g = tp.grad(Var{&tp, io});
        Mat& ga = tp.grad(Var{&tp, ia});
        Eigen::Index k = 0;
        for (Eigen::Index i = 0; i < ga.rows(); ++i) {
            for (Eigen::Index j = 0; j < ga.cols(); ++j) {
                ga(i, j) += g(k / cols, k % cols);
                ++k;
            }
        }
    });
}

Var cross_entropy(Var logits, const std::vector<int>& targets,
                  const std::vector<uint8_t>& mask) {
    Tape& t = *logits.tape;
    const Mat& z = t.val(logits);
    if (static_cast<Eigen::Index>(targets.size()) != z.rows()) {
        throw InputError("cross_entropy: target count != logit rows");
    }
    const std::vector<uint8_t> m = expand_mask(z.rows(), mask);
    int kept = 0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        if (!m[static_cast<size_t>(i)]) {
            continue;
        }
        const int y = targets[static_cast<size_t>(i)];
        if (y < 0 || y >= z.cols()) {
            throw InputError("cross_entropy: target id out of range");
        }
        total += row_logsumexp(z.row(i)) - z(i, y);
        ++kept;
    }
    if (kept == 0) {
        throw DataError("cross_entropy: every position is masked");
    }
    Mat out(1, 1);
    out(0, 0) = total / kept;
    if (!t.requires_grad(logits)) {
        return t.constant(std::move(out));
    }
    const int iz = logits.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [iz, io, targets, m, kept](Tape& tp) {
        const double g = tp.grad(Var{&tp, io})(0, 0);
        const Mat& z = tp.val(Var{&tp, iz});
        Mat& gz = tp.grad(Var{&tp, iz});
        const double w = g / kept;
        for (Eigen::Index i = 0; i < z.rows(); ++i) {
            if (!m[static_cast<size_t>(i)]) {
                continue;
            }
            const double mx = z.row(i).maxCoeff();
            Eigen::RowVectorXd e = (z.row(i).array() - mx).exp();
            Eigen::RowVectorXd p = e / e.sum();
            p(targets[static_cast<size_t>(i)]) -= 1.0;
            gz.row(i) += w * p;
        }
    });
}

Var soft_cross_entropy(Var student_logits, const Mat& teacher_logits,
                       const std::vector<uint8_t>& mask, double temperature) {
    Tape& t = *student_logits.tape;
    const Mat& s = t.val(student_logits);
    check_same_shape(s, teacher_logits, "soft_cross_entropy");
    if (temperature <= 0.0) {
        throw InputError("soft_cross_entropy: temperature must be positive");
    }
    const std::vector<uint8_t> m = expand_mask(s.rows(), mask);
    Mat teacher_probs = softmax_rows(teacher_logits / temperature, nullptr);
    int kept = 0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        if (!m[static_cast<size_t>(i)]) {
            continue;
        }
        const Eigen::RowVectorXd zs = s.row(i) / temperature;
        total += row_logsumexp(zs) - teacher_probs.row(i).dot(zs);
        ++kept;
    }
    if (kept == 0) {
        throw DataError("soft_cross_entropy: every position is masked");
    }
    Mat out(1, 1);
    out(0, 0) = total / kept;
    if (!t.requires_grad(student_logits)) {
        return t.constant(std::move(out));
    }
    const int is = student_logits.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true,
                  [is, io, teacher_probs, m, kept, temperature](Tape& tp) {
        const double g = tp.grad(Var{&tp, io})(0, 0);
        const Mat& s = tp.val(Var{&tp, is});
        Mat& gs = tp.grad(Var{&tp, is});
        const double w = g / (kept * temperature);
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            if (!m[static_cast<size_t>(i)]) {
                continue;
            }
            const double mx = s.row(i).maxCoeff() / temperature;
            Eigen::RowVectorXd e =
                ((s.row(i) / temperature).array() - mx).exp();
            Eigen::RowVectorXd p = e / e.sum();
            gs.row(i) += w * (p - teacher_probs.row(i));
        }
    });
}

Var neg_cosine_rows(Var student, const Mat& teacher,
                    const std::vector<uint8_t>& mask, int* zero_norm_rows) {
    Tape& t = *student.tape;
    const Mat& s = t.val(student);
    check_same_shape(s, teacher, "neg_cosine_rows");
    const std::vector<uint8_t> m = expand_mask(s.rows(), mask);
    constexpr double kNormTol = 1e-30;
    int kept = 0;
    int zeroed = 0;
    double total = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        if (!m[static_cast<size_t>(i)]) {
            continue;
        }
        const double ns = s.row(i).norm();
        const double nt = teacher.row(i).norm();
        if (ns < kNormTol || nt < kNormTol) {
            ++zeroed;
        } else {
            total += -s.row(i).dot(teacher.row(i)) / (ns * nt);
        }
        ++kept;
    }
    if (kept == 0) {
        throw DataError("neg_cosine_rows: every position is masked");
    }
    if (zero_norm_rows != nullptr) {
        *zero_norm_rows = zeroed;
    }
    Mat out(1, 1);
    out(0, 0) = total / kept;
    if (!t.requires_grad(student)) {
        return t.constant(std::move(out));
    }
    const int is = student.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [is, io, teacher, m, kept](Tape& tp) {
        const double g = tp.grad(Var{&tp, io})(0, 0);
        const Mat& s = tp.val(Var{&tp, is});
        Mat& gs = tp.grad(Var{&tp, is});
        const double w = g / kept;
        for (Eigen::Index i = 0; i < s.rows(); ++i) {
            if (!m[static_cast<size_t>(i)]) {
                continue;
            }
            const double ns = s.row(i).norm();
            const double nt = teacher.row(i).norm();
            if (ns < 1e-30 || nt < 1e-30) {
                continue;
            }
            const double cosv = s.row(i).dot(teacher.row(i)) / (ns * nt);
            // d(-cos)/ds = -(t/(|s||t|) - cos * s/|s|^2)
            gs.row(i) += w * (-(teacher.row(i) / (ns * nt)) +
                              (cosv / (ns * ns)) * s.row(i));
        }
    });
}

Var mse_against(Var student, const Mat& teacher) {
    Tape& t = *student.tape;
    const Mat& s = t.val(student);
    check_same_shape(s, teacher, "mse_against");
    const double n = static_cast<double>(s.size());
    Mat out(1, 1);
    out(0, 0) = (s - teacher).squaredNorm() / n;
    if (!t.requires_grad(student)) {
        return t.constant(std::move(out));
    }
    const int is = student.id;
    const int io = static_cast<int>(t.size());
    return t.push(std::move(out), true, [is, io, teacher, n](Tape& tp) {
        const double g = tp.grad(Var{&tp, io})(0, 0);
        tp.grad(Var{&tp, is}) +=
            (2.0 * g / n) * (tp.val(Var{&tp, is}) - teacher);
    });
}

}  // namespace aag::ad
