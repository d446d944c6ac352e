#include "hgan/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "hgan/error.hpp"

namespace hgan::ad {

namespace {

thread_local KinkStats* g_kinks = nullptr;

void note_relu_input(double x) {
    if (g_kinks) g_kinks->min_abs_relu = std::min(g_kinks->min_abs_relu, std::abs(x));
}

void note_hinge_gap(double g) {
    if (g_kinks) g_kinks->min_hinge_gap = std::min(g_kinks->min_hinge_gap, g);
}

void note_argmax_gap(double g) {
    if (g_kinks) g_kinks->min_argmax_gap = std::min(g_kinks->min_argmax_gap, g);
}

void note_sort_gap(double g) {
    if (g_kinks) g_kinks->min_sort_gap = std::min(g_kinks->min_sort_gap, g);
}

Var make(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>(std::move(value));
    n->parents = std::move(parents);
    n->backprop = std::move(backprop);
    return Var(std::move(n));
}

void softmax_row_kernel(const double* in, double* out, std::size_t n) {
    double mx = in[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(in[i] - mx);
        denom += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= denom;
}

// d(softmax)/dx given output y and incoming g, row of length n
void softmax_row_backward(const double* y, const double* g, double* dx, std::size_t n) {
    double gy = 0.0;
    for (std::size_t i = 0; i < n; ++i) gy += g[i] * y[i];
    for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - gy);
}

} // namespace

double KinkStats::min_gap() const {
    return std::min(std::min(min_abs_relu, min_hinge_gap),
                    std::min(min_argmax_gap, min_sort_gap));
}

void set_kink_stats(KinkStats* sink) { g_kinks = sink; }

Var add(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
        taxpy(1.0, self.adjoint, self.parents[0]->adjoint);
        taxpy(1.0, self.adjoint, self.parents[1]->adjoint);
    });
}

Var sub(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
        taxpy(1.0, self.adjoint, self.parents[0]->adjoint);
        taxpy(-1.0, self.adjoint, self.parents[1]->adjoint);
    });
}

Var mul(Var a, Var b) {
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        for (std::size_t i = 0; i < self.adjoint.size(); ++i) {
            pa.adjoint[i] += self.adjoint[i] * pb.value[i];
            pb.adjoint[i] += self.adjoint[i] * pa.value[i];
        }
    });
}

Var scale(Var a, double c) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return make(std::move(out), {a.node()},
                [c](Node& self) { taxpy(c, self.adjoint, self.parents[0]->adjoint); });
}

Var one_minus(Var a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - out[i];
    return make(std::move(out), {a.node()},
                [](Node& self) { taxpy(-1.0, self.adjoint, self.parents[0]->adjoint); });
}

Var relu(Var a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        note_relu_input(out[i]);
        // subgradient at 0 is 0: the zero branch owns the boundary
        if (out[i] <= 0.0) out[i] = 0.0;
    }
    return make(std::move(out), {a.node()}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.adjoint.size(); ++i)
            if (p.value[i] > 0.0) p.adjoint[i] += self.adjoint[i];
    });
}

Var sigmoid(Var a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    return make(std::move(out), {a.node()}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.adjoint.size(); ++i) {
            const double s = self.value[i];
            p.adjoint[i] += self.adjoint[i] * s * (1.0 - s);
        }
    });
}

Var tanh_op(Var a) {
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    return make(std::move(out), {a.node()}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.adjoint.size(); ++i) {
            const double t = self.value[i];
            p.adjoint[i] += self.adjoint[i] * (1.0 - t * t);
        }
    });
}

Var matmul(Var a, Var b) {
    Tensor out = tmatmul(a.value(), b.value());
    return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        taxpy(1.0, tmatmul_nt(self.adjoint, pb.value), pa.adjoint);  // g.b^T
        taxpy(1.0, tmatmul_tn(pa.value, self.adjoint), pb.adjoint);  // a^T.g
    });
}

Var matmul_nt(Var a, Var b) {
    Tensor out = tmatmul_nt(a.value(), b.value());
    return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
        Node& pa = *self.parents[0];
        Node& pb = *self.parents[1];
        taxpy(1.0, tmatmul(self.adjoint, pb.value), pa.adjoint);     // g.b
        taxpy(1.0, tmatmul_tn(self.adjoint, pa.value), pb.adjoint);  // g^T.a
    });
}

Var matvec(Var w, Var x) {
    const Tensor& wm = w.value();
    const Tensor& xv = x.value();
    if (wm.rank() != 2 || xv.rank() != 1 || wm.cols() != xv.size()) {
        throw ShapeError("matvec: shape mismatch " + wm.shape_str() + " vs " + xv.shape_str());
    }
    Tensor out({wm.rows()});
    for (std::size_t r = 0; r < wm.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < wm.cols(); ++c) acc += wm.at(r, c) * xv[c];
        out[r] = acc;
    }
    return make(std::move(out), {w.node(), x.node()}, [](Node& self) {
        Node& pw = *self.parents[0];
        Node& px = *self.parents[1];
        const std::size_t rows = pw.value.rows(), cols = pw.value.cols();
        for (std::size_t r = 0; r < rows; ++r) {
            const double g = self.adjoint[r];
            if (g == 0.0) continue;
            for (std::size_t c = 0; c < cols; ++c) {
                pw.adjoint.at(r, c) += g * px.value[c];
                px.adjoint[c] += g * pw.value.at(r, c);
            }
        }
    });
}

Var affine(Var x, Var w, Var b) {
    const Tensor& xv = x.value();
    const Tensor& wv = w.value();
    const Tensor& bv = b.value();
    if (xv.cols() != wv.cols() || bv.size() != wv.rows()) {
        throw ShapeError("affine: shape mismatch x" + xv.shape_str() + " W" + wv.shape_str() +
                         " b" + bv.shape_str());
    }
    Tensor out = tmatmul_nt(xv, wv);
    for (std::size_t i = 0; i < out.rows(); ++i)
        for (std::size_t j = 0; j < out.cols(); ++j) out.at(i, j) += bv[j];
    return make(std::move(out), {x.node(), w.node(), b.node()}, [](Node& self) {
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        Node& pb = *self.parents[2];
        taxpy(1.0, tmatmul(self.adjoint, pw.value), px.adjoint);     // g.W
        taxpy(1.0, tmatmul_tn(self.adjoint, px.value), pw.adjoint);  // g^T.x
        for (std::size_t i = 0; i < self.adjoint.rows(); ++i)
            for (std::size_t j = 0; j < self.adjoint.cols(); ++j)
                pb.adjoint[j] += self.adjoint.at(i, j);
    });
}

Var sum_all(Var a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.value().size(); ++i) acc += a.value()[i];
    return make(Tensor::scalar(acc), {a.node()}, [](Node& self) {
        Node& p = *self.parents[0];
        const double g = self.adjoint[0];
        for (std::size_t i = 0; i < p.adjoint.size(); ++i) p.adjoint[i] += g;
    });
}

Var mean_rows(Var a) {
    const Tensor& x = a.value();
    if (x.rank() != 2) throw ShapeError("mean_rows: expected rank-2, got " + x.shape_str());
    const std::size_t n = x.rows(), d = x.cols();
    Tensor out({d});
    for (std::size_t c = 0; c < d; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += x.at(i, c);
        out[c] = acc / static_cast<double>(n);
    }
    return make(std::move(out), {a.node()}, [n, d](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t c = 0; c < d; ++c) {
            const double g = self.adjoint[c] / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) p.adjoint.at(i, c) += g;
        }
    });
}

Var dot(Var u, Var v) {
    return make(Tensor::scalar(tdot(u.value(), v.value())), {u.node(), v.node()},
                [](Node& self) {
                    Node& pu = *self.parents[0];
                    Node& pv = *self.parents[1];
                    taxpy(self.adjoint[0], pv.value, pu.adjoint);
                    taxpy(self.adjoint[0], pu.value, pv.adjoint);
                });
}

Var reshape(Var a, std::vector<std::size_t> shape) {
    Tensor out(std::move(shape), a.value().values());
    return make(std::move(out), {a.node()}, [](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < self.adjoint.size(); ++i) p.adjoint[i] += self.adjoint[i];
    });
}

Var row(Var a, std::size_t i) {
    const Tensor& x = a.value();
    if (i >= x.rows()) throw ShapeError("row: index out of range");
    const std::size_t d = x.cols();
    Tensor out({d});
    for (std::size_t c = 0; c < d; ++c) out[c] = x.at(i, c);
    return make(std::move(out), {a.node()}, [i, d](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t c = 0; c < d; ++c) p.adjoint.at(i, c) += self.adjoint[c];
    });
}

Var gather_rows(Var a, std::vector<std::size_t> indices) {
    const Tensor& x = a.value();
    const std::size_t d = x.cols();
    Tensor out({indices.size(), d});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        if (indices[r] >= x.rows()) throw ShapeError("gather_rows: index out of range");
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) = x.at(indices[r], c);
    }
    return make(std::move(out), {a.node()}, [idx = std::move(indices), d](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < d; ++c)
                p.adjoint.at(idx[r], c) += self.adjoint.at(r, c);
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    if (parts.size() == 1) return parts[0];
    const std::size_t d = parts[0].value().cols();
    std::size_t n = 0;
    std::vector<NodePtr> parents;
    for (const Var& p : parts) {
        if (p.value().cols() != d) throw ShapeError("concat_rows: column mismatch");
        n += p.value().rows();
        parents.push_back(p.node());
    }
    Tensor out({n, d});
    std::size_t r0 = 0;
    for (const Var& p : parts) {
        for (std::size_t r = 0; r < p.value().rows(); ++r)
            for (std::size_t c = 0; c < d; ++c) out.at(r0 + r, c) = p.value().at(r, c);
        r0 += p.value().rows();
    }
    return make(std::move(out), std::move(parents), [d](Node& self) {
        std::size_t r0 = 0;
        for (auto& p : self.parents) {
            for (std::size_t r = 0; r < p->value.rows(); ++r)
                for (std::size_t c = 0; c < d; ++c)
                    p->adjoint.at(r, c) += self.adjoint.at(r0 + r, c);
            r0 += p->value.rows();
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    if (parts.size() == 1) return parts[0];
    const std::size_t n = parts[0].value().rows();
    std::size_t d = 0;
    std::vector<NodePtr> parents;
    for (const Var& p : parts) {
        if (p.value().rows() != n) throw ShapeError("concat_cols: row mismatch");
        d += p.value().cols();
        parents.push_back(p.node());
    }
    Tensor out({n, d});
    std::size_t c0 = 0;
    for (const Var& p : parts) {
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < p.value().cols(); ++c)
                out.at(r, c0 + c) = p.value().at(r, c);
        c0 += p.value().cols();
    }
    return make(std::move(out), std::move(parents), [n](Node& self) {
        std::size_t c0 = 0;
        for (auto& p : self.parents) {
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t c = 0; c < p->value.cols(); ++c)
                    p->adjoint.at(r, c) += self.adjoint.at(r, c0 + c);
            c0 += p->value.cols();
        }
    });
}

Var concat_vecs(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat_vecs: no parts");
    std::size_t n = 0;
    std::vector<NodePtr> parents;
    for (const Var& p : parts) {
        n += p.value().size();
        parents.push_back(p.node());
    }
    Tensor out({n});
    std::size_t o = 0;
    for (const Var& p : parts)
        for (std::size_t i = 0; i < p.value().size(); ++i) out[o++] = p.value()[i];
    return make(std::move(out), std::move(parents), [](Node& self) {
        std::size_t o = 0;
        for (auto& p : self.parents)
            for (std::size_t i = 0; i < p->value.size(); ++i) p->adjoint[i] += self.adjoint[o++];
    });
}

Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no rows");
    const std::size_t d = rows[0].value().size();
    std::vector<NodePtr> parents;
    Tensor out({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].value().size() != d) throw ShapeError("stack_rows: length mismatch");
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) = rows[r].value()[c];
        parents.push_back(rows[r].node());
    }
    return make(std::move(out), std::move(parents), [d](Node& self) {
        for (std::size_t r = 0; r < self.parents.size(); ++r)
            for (std::size_t c = 0; c < d; ++c)
                self.parents[r]->adjoint[c] += self.adjoint.at(r, c);
    });
}

Var stack_scalars(const std::vector<Var>& scalars, std::vector<std::size_t> shape) {
    Tensor out(std::move(shape));
    if (out.size() != scalars.size()) throw ShapeError("stack_scalars: count mismatch");
    std::vector<NodePtr> parents;
    parents.reserve(scalars.size());
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].value().size() != 1) throw ShapeError("stack_scalars: non-scalar part");
        out[i] = scalars[i].value()[0];
        parents.push_back(scalars[i].node());
    }
    return make(std::move(out), std::move(parents), [](Node& self) {
        for (std::size_t i = 0; i < self.parents.size(); ++i)
            self.parents[i]->adjoint[0] += self.adjoint[i];
    });
}

Var softmax_rows(Var a) {
    const Tensor& x = a.value();
    if (x.rank() != 2) throw ShapeError("softmax_rows: expected rank-2, got " + x.shape_str());
    const std::size_t n = x.rows(), m = x.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i)
        softmax_row_kernel(x.data() + i * m, out.data() + i * m, m);
    return make(std::move(out), {a.node()}, [n, m](Node& self) {
        Node& p = *self.parents[0];
        for (std::size_t i = 0; i < n; ++i)
            softmax_row_backward(self.value.data() + i * m, self.adjoint.data() + i * m,
                                 p.adjoint.data() + i * m, m);
    });
}

Var softmax_vec(Var a) {
    const Tensor& x = a.value();
    if (x.rank() != 1) throw ShapeError("softmax_vec: expected rank-1, got " + x.shape_str());
    Tensor out({x.size()});
    softmax_row_kernel(x.data(), out.data(), x.size());
    return make(std::move(out), {a.node()}, [](Node& self) {
        softmax_row_backward(self.value.data(), self.adjoint.data(),
                             self.parents[0]->adjoint.data(), self.value.size());
    });
}

BatchNormState BatchNormState::init(std::size_t channels, double momentum, double epsilon) {
    BatchNormState s;
    s.gamma = Tensor({channels});
    s.gamma.fill(1.0);
    s.beta = Tensor({channels});
    s.running_mean = Tensor({channels});
    s.running_var = Tensor({channels});
    s.running_var.fill(1.0);
    s.momentum = momentum;
    s.epsilon = epsilon;
    return s;
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode,
               bool update_running) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2) throw ShapeError("batch_norm: expected rank-2, got " + xv.shape_str());
    const std::size_t n = xv.rows(), d = xv.cols();
    if (gamma.value().size() != d || beta.value().size() != d)
        throw ShapeError("batch_norm: channel mismatch");

    std::vector<double> mu(d), istd(d);
    if (mode == Mode::Train) {
        for (std::size_t c = 0; c < d; ++c) {
            double m = 0.0;
            for (std::size_t i = 0; i < n; ++i) m += xv.at(i, c);
            m /= static_cast<double>(n);
            double v = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double e = xv.at(i, c) - m;
                v += e * e;
            }
            v /= static_cast<double>(n);
            mu[c] = m;
            istd[c] = 1.0 / std::sqrt(v + state.epsilon);
            if (update_running) {
                state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] +
                                        state.momentum * m;
                state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] +
                                       state.momentum * v;
            }
        }
    } else {
        for (std::size_t c = 0; c < d; ++c) {
            mu[c] = state.running_mean[c];
            istd[c] = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
        }
    }

    Tensor out({n, d});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c)
            out.at(i, c) = gamma.value()[c] * (xv.at(i, c) - mu[c]) * istd[c] + beta.value()[c];

    const bool train = mode == Mode::Train;
    return make(std::move(out), {x.node(), gamma.node(), beta.node()},
                [mu = std::move(mu), istd = std::move(istd), n, d, train](Node& self) {
                    Node& px = *self.parents[0];
                    Node& pg = *self.parents[1];
                    Node& pb = *self.parents[2];
                    for (std::size_t c = 0; c < d; ++c) {
                        const double gam = pg.value[c];
                        double sum_g = 0.0, sum_gx = 0.0;
                        for (std::size_t i = 0; i < n; ++i) {
                            const double g = self.adjoint.at(i, c);
                            const double xh = (px.value.at(i, c) - mu[c]) * istd[c];
                            sum_g += g;
                            sum_gx += g * xh;
                        }
                        pg.adjoint[c] += sum_gx;
                        pb.adjoint[c] += sum_g;
                        if (train) {
                            // normalize over the node axis: mean and variance both
                            // depend on every row
                            const double inv_n = 1.0 / static_cast<double>(n);
                            for (std::size_t i = 0; i < n; ++i) {
                                const double g = self.adjoint.at(i, c);
                                const double xh = (px.value.at(i, c) - mu[c]) * istd[c];
                                px.adjoint.at(i, c) +=
                                    gam * istd[c] * (g - inv_n * sum_g - inv_n * xh * sum_gx);
                            }
                        } else {
                            for (std::size_t i = 0; i < n; ++i)
                                px.adjoint.at(i, c) += self.adjoint.at(i, c) * gam * istd[c];
                        }
                    }
                });
}

Var cosine(Var u, Var v) {
    require_same_shape(u.value(), v.value(), "cosine");
    const double nu = tnorm(u.value());
    const double nv = tnorm(v.value());
    if (nu == 0.0 || nv == 0.0) throw DataError("cosine: zero-norm vector");
    const double s = tdot(u.value(), v.value());
    const double c = s / (nu * nv);
    return make(Tensor::scalar(c), {u.node(), v.node()}, [nu, nv, c](Node& self) {
        Node& pu = *self.parents[0];
        Node& pv = *self.parents[1];
        const double g = self.adjoint[0];
        for (std::size_t i = 0; i < pu.value.size(); ++i) {
            pu.adjoint[i] += g * (pv.value[i] / (nu * nv) - c * pu.value[i] / (nu * nu));
            pv.adjoint[i] += g * (pu.value[i] / (nu * nv) - c * pv.value[i] / (nv * nv));
        }
    });
}

Var sort_pool(Var nodes, Var theta) {
    const Tensor& x = nodes.value();
    const Tensor& th = theta.value();
    if (x.rank() != 2) throw ShapeError("sort_pool: expected rank-2 nodes");
    const std::size_t n = x.rows(), d = x.cols();
    if (th.size() != n) throw ShapeError("sort_pool: theta length mismatch");

    // per-channel descending order, ties broken by lower row index
    std::vector<std::size_t> perm(n * d);
    std::vector<std::size_t> scratch(n);
    Tensor out({d});
    for (std::size_t c = 0; c < d; ++c) {
        std::iota(scratch.begin(), scratch.end(), std::size_t{0});
        std::stable_sort(scratch.begin(), scratch.end(), [&](std::size_t i, std::size_t j) {
            return x.at(i, c) > x.at(j, c);
        });
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            perm[c * n + i] = scratch[i];
            acc += th[i] * x.at(scratch[i], c);
            // an exact tie stays a tie under perturbation (it comes from
            // co-moving values, e.g. clamped activations); only near-ties
            // can reorder and break differentiability
            if (i + 1 < n) {
                const double gap = x.at(scratch[i], c) - x.at(scratch[i + 1], c);
                if (gap > 0.0) note_sort_gap(gap);
            }
        }
        out[c] = acc;
    }
    return make(std::move(out), {nodes.node(), theta.node()},
                [perm = std::move(perm), n, d](Node& self) {
                    Node& px = *self.parents[0];
                    Node& pt = *self.parents[1];
                    for (std::size_t c = 0; c < d; ++c) {
                        const double g = self.adjoint[c];
                        for (std::size_t i = 0; i < n; ++i) {
                            const std::size_t src = perm[c * n + i];
                            px.adjoint.at(src, c) += g * pt.value[i];
                            pt.adjoint[i] += g * px.value.at(src, c);
                        }
                    }
                });
}

Var triplet_loss(Var sim, double margin, bool mean_reduce) {
    const Tensor& s = sim.value();
    if (s.rank() != 2 || s.rows() != s.cols())
        throw ShapeError("triplet_loss: expected square matrix, got " + s.shape_str());
    const std::size_t b = s.rows();
    if (b < 2) throw DataError("triplet_loss: batch of " + std::to_string(b) +
                               " has no negatives");

    struct Term {
        std::size_t a, neg;
        bool row;  // true: hardest text for image a, false: hardest image for text a
        bool active;
    };
    std::vector<Term> terms;
    terms.reserve(2 * b);
    const double w = mean_reduce ? 1.0 / static_cast<double>(b) : 1.0;
    double loss = 0.0;
    for (std::size_t a = 0; a < b; ++a) {
        std::size_t jmax = b, imax = b;
        double jbest = 0.0, jsecond = 0.0, ibest = 0.0, isecond = 0.0;
        for (std::size_t o = 0; o < b; ++o) {
            if (o == a) continue;
            if (jmax == b || s.at(a, o) > jbest) {
                jsecond = jmax == b ? -std::numeric_limits<double>::infinity() : jbest;
                jbest = s.at(a, o);
                jmax = o;
            } else {
                jsecond = std::max(jsecond, s.at(a, o));
            }
            if (imax == b || s.at(o, a) > ibest) {
                isecond = imax == b ? -std::numeric_limits<double>::infinity() : ibest;
                ibest = s.at(o, a);
                imax = o;
            } else {
                isecond = std::max(isecond, s.at(o, a));
            }
        }
        if (b > 2) {
            note_argmax_gap(jbest - jsecond);
            note_argmax_gap(ibest - isecond);
        }
        const double t1 = margin + jbest - s.at(a, a);
        const double t2 = margin + ibest - s.at(a, a);
        note_hinge_gap(std::abs(t1));
        note_hinge_gap(std::abs(t2));
        if (t1 > 0.0) loss += w * t1;
        if (t2 > 0.0) loss += w * t2;
        terms.push_back({a, jmax, true, t1 > 0.0});
        terms.push_back({a, imax, false, t2 > 0.0});
    }
    return make(Tensor::scalar(loss), {sim.node()},
                [terms = std::move(terms), w](Node& self) {
                    Node& p = *self.parents[0];
                    const double g = self.adjoint[0] * w;
                    for (const auto& t : terms) {
                        if (!t.active) continue;
                        if (t.row)
                            p.adjoint.at(t.a, t.neg) += g;
                        else
                            p.adjoint.at(t.neg, t.a) += g;
                        p.adjoint.at(t.a, t.a) -= g;
                    }
                });
}

Var gru_cell(Var x, Var h_prev, const GruCellVars& p) {
    Var z = sigmoid(add(add(matvec(p.W_z, x), matvec(p.U_z, h_prev)), p.b_z));
    Var r = sigmoid(add(add(matvec(p.W_r, x), matvec(p.U_r, h_prev)), p.b_r));
    Var h_cand = tanh_op(add(add(matvec(p.W_h, x), matvec(p.U_h, mul(r, h_prev))), p.b_h));
    return add(mul(one_minus(z), h_prev), mul(z, h_cand));
}

double backward(const Var& root) {
    if (!root.valid() || root.value().size() != 1)
        throw ShapeError("backward: root must be a scalar");

    // iterative post-order DFS; each node emitted once
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* child = node->parents[next++].get();
            if (visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->adjoint.fill(1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backprop) (*it)->backprop(**it);
    return root.value()[0];
}

} // namespace hgan::ad
