#include "edemajoint/gradnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "edemajoint/kernels.hpp"

namespace edemajoint::gradnet {

const char* submodel_name(Submodel s) {
    switch (s) {
        case Submodel::image_encoder: return "image_encoder";
        case Submodel::text_encoder: return "text_encoder";
        case Submodel::image_classifier: return "image_classifier";
        case Submodel::text_classifier: return "text_classifier";
    }
    return "?";
}

Submodel submodel_from_name(const std::string& name) {
    if (name == "image_encoder") return Submodel::image_encoder;
    if (name == "text_encoder") return Submodel::text_encoder;
    if (name == "image_classifier") return Submodel::image_classifier;
    if (name == "text_classifier") return Submodel::text_classifier;
    throw ParameterError("unknown submodel tag: " + name);
}

Tensor& ParameterStore::add(const std::string& name, Submodel owner, std::vector<int> shape) {
    if (index_.count(name)) throw ParameterError("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, owner, Tensor(std::move(shape))});
    return entries_.back().value;
}

bool ParameterStore::has(const std::string& name) const { return index_.count(name) != 0; }

Tensor& ParameterStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter: " + name);
    return entries_[it->second].value;
}

const Tensor& ParameterStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter: " + name);
    return entries_[it->second].value;
}

Submodel ParameterStore::owner_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ParameterError("unknown parameter: " + name);
    return entries_[it->second].owner;
}

std::size_t ParameterStore::total_scalars() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.value.numel();
    return n;
}

namespace {

void check_finite(const Tensor& t, const char* op) {
    double acc = 0.0;
    for (double v : t.vec()) acc += std::abs(v);
    if (!std::isfinite(acc)) throw NumericError(std::string("non-finite value in op ") + op);
}

void axpy(Tensor& dst, const Tensor& src) {
    double* d = dst.data();
    const double* s = src.data();
    for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

}  // namespace

Var Tape::fresh(const char* op, Tensor value, bool requires_grad) {
    check_finite(value, op);
    nodes_.emplace_back();
    Node& n = nodes_.back();
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.op = op;
    return &n;
}

void Tape::ensure_grad(Var v) {
    if (!v->has_grad) {
        v->grad = Tensor(v->value.shape());
        v->has_grad = true;
    }
}

Var Tape::param(const ParameterStore& store, const std::string& name) {
    Var v = fresh("param", store.at(name), true);
    v->param = name;
    return v;
}

Var Tape::constant(Tensor v) { return fresh("const", std::move(v), false); }
Var Tape::input(Tensor v) { return fresh("input", std::move(v), true); }

Var Tape::conv2d(Var x, Var w, Var b, int stride, int pad) {
    if (x->value.ndim() != 3 || w->value.ndim() != 4)
        throw ShapeError("conv2d: expected x[c,h,w] " + x->value.shape_str() + " and w[o,c,kh,kw] " +
                         w->value.shape_str());
    kernels::ConvDims d{x->value.dim(0), x->value.dim(1), x->value.dim(2),
                        w->value.dim(0), w->value.dim(2), w->value.dim(3), stride, pad};
    if (w->value.dim(1) != d.cin)
        throw ShapeError("conv2d: channel mismatch " + x->value.shape_str() + " vs " +
                         w->value.shape_str());
    if (b && b->value.numel() != static_cast<std::size_t>(d.cout))
        throw ShapeError("conv2d: bias size mismatch " + b->value.shape_str());
    Tensor y({d.cout, d.ho(), d.wo()});
    kernels::conv2d_fw(x->value.data(), w->value.data(), b ? b->value.data() : nullptr, y.data(), d);
    bool rg = x->requires_grad || w->requires_grad || (b && b->requires_grad);
    Var out = fresh("conv2d", std::move(y), rg);
    if (rg)
        out->backprop = [x, w, b, d](Node& self) {
            if (x->requires_grad) {
                ensure_grad(x);
                kernels::conv2d_bw_input(self.grad.data(), w->value.data(), x->grad.data(), d);
            }
            if (w->requires_grad) {
                ensure_grad(w);
                double* gb = nullptr;
                if (b && b->requires_grad) {
                    ensure_grad(b);
                    gb = b->grad.data();
                }
                kernels::conv2d_bw_weight(self.grad.data(), x->value.data(), w->grad.data(), gb, d);
            } else if (b && b->requires_grad) {
                ensure_grad(b);
                Tensor scratch(w->value.shape());
                kernels::conv2d_bw_weight(self.grad.data(), x->value.data(), scratch.data(),
                                          b->grad.data(), d);
            }
        };
    return out;
}

Var Tape::matmul(Var a, Var b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0))
        throw ShapeError("matmul: " + a->value.shape_str() + " x " + b->value.shape_str());
    const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor y({m, n});
    kernels::matmul(a->value.data(), b->value.data(), y.data(), m, k, n);
    bool rg = a->requires_grad || b->requires_grad;
    Var out = fresh("matmul", std::move(y), rg);
    if (rg)
        out->backprop = [a, b, m, k, n](Node& self) {
            if (a->requires_grad) {
                ensure_grad(a);
                Tensor tmp({m, k});
                kernels::matmul_nt(self.grad.data(), b->value.data(), tmp.data(), m, n, k);
                axpy(a->grad, tmp);
            }
            if (b->requires_grad) {
                ensure_grad(b);
                Tensor tmp({k, n});
                kernels::matmul_tn(a->value.data(), self.grad.data(), tmp.data(), k, m, n);
                axpy(b->grad, tmp);
            }
        };
    return out;
}

Var Tape::matmul_nt(Var a, Var b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(1))
        throw ShapeError("matmul_nt: " + a->value.shape_str() + " x " + b->value.shape_str());
    const int m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(0);
    Tensor y({m, n});
    kernels::matmul_nt(a->value.data(), b->value.data(), y.data(), m, k, n);
    bool rg = a->requires_grad || b->requires_grad;
    Var out = fresh("matmul_nt", std::move(y), rg);
    if (rg)
        out->backprop = [a, b, m, k, n](Node& self) {
            if (a->requires_grad) {
                // gA[m,k] = gY[m,n] * B[n,k]
                ensure_grad(a);
                Tensor tmp({m, k});
                kernels::matmul(self.grad.data(), b->value.data(), tmp.data(), m, n, k);
                axpy(a->grad, tmp);
            }
            if (b->requires_grad) {
                // gB[n,k] = gY^T[n,m] * A[m,k]
                ensure_grad(b);
                Tensor tmp({n, k});
                kernels::matmul_tn(self.grad.data(), a->value.data(), tmp.data(), n, m, k);
                axpy(b->grad, tmp);
            }
        };
    return out;
}

Var Tape::linear_rows(Var x, Var w, Var b) {
    Var y = matmul(x, w);
    if (!b) return y;
    const int t = y->value.dim(0), n = y->value.dim(1);
    if (b->value.numel() != static_cast<std::size_t>(n))
        throw ShapeError("linear_rows: bias " + b->value.shape_str() + " vs cols " +
                         std::to_string(n));
    Tensor v = y->value;
    for (int i = 0; i < t; ++i)
        for (int j = 0; j < n; ++j) v[static_cast<std::size_t>(i) * n + j] += b->value[j];
    bool rg = y->requires_grad || b->requires_grad;
    Var out = fresh("bias_rows", std::move(v), rg);
    if (rg)
        out->backprop = [y, b, t, n](Node& self) {
            if (y->requires_grad) {
                ensure_grad(y);
                axpy(y->grad, self.grad);
            }
            if (b->requires_grad) {
                ensure_grad(b);
                for (int i = 0; i < t; ++i)
                    for (int j = 0; j < n; ++j)
                        b->grad[j] += self.grad[static_cast<std::size_t>(i) * n + j];
            }
        };
    return out;
}

Var Tape::affine(Var x, Var w, Var b) {
    if (x->value.ndim() != 1 || w->value.ndim() != 2 ||
        w->value.dim(1) != static_cast<int>(x->value.numel()))
        throw ShapeError("affine: w " + w->value.shape_str() + " vs x " + x->value.shape_str());
    const int n = w->value.dim(0), k = w->value.dim(1);
    if (b && b->value.numel() != static_cast<std::size_t>(n))
        throw ShapeError("affine: bias " + b->value.shape_str());
    Tensor y({n});
    for (int o = 0; o < n; ++o) {
        double acc = b ? b->value[o] : 0.0;
        const double* wr = w->value.data() + static_cast<std::size_t>(o) * k;
        for (int i = 0; i < k; ++i) acc += wr[i] * x->value[i];
        y[o] = acc;
    }
    bool rg = x->requires_grad || w->requires_grad || (b && b->requires_grad);
    Var out = fresh("affine", std::move(y), rg);
    if (rg)
        out->backprop = [x, w, b, n, k](Node& self) {
            if (x->requires_grad) {
                ensure_grad(x);
                for (int o = 0; o < n; ++o) {
                    const double g = self.grad[o];
                    const double* wr = w->value.data() + static_cast<std::size_t>(o) * k;
                    for (int i = 0; i < k; ++i) x->grad[i] += g * wr[i];
                }
            }
            if (w->requires_grad) {
                ensure_grad(w);
                for (int o = 0; o < n; ++o) {
                    const double g = self.grad[o];
                    double* gr = w->grad.data() + static_cast<std::size_t>(o) * k;
                    for (int i = 0; i < k; ++i) gr[i] += g * x->value[i];
                }
            }
            if (b && b->requires_grad) {
                ensure_grad(b);
                for (int o = 0; o < n; ++o) b->grad[o] += self.grad[o];
            }
        };
    return out;
}

Var Tape::add(Var a, Var b) {
    require_same_shape(a->value, b->value, "add");
    Tensor y = a->value;
    axpy(y, b->value);
    bool rg = a->requires_grad || b->requires_grad;
    Var out = fresh("add", std::move(y), rg);
    if (rg)
        out->backprop = [a, b](Node& self) {
            if (a->requires_grad) {
                ensure_grad(a);
                axpy(a->grad, self.grad);
            }
            if (b->requires_grad) {
                ensure_grad(b);
                axpy(b->grad, self.grad);
            }
        };
    return out;
}

Var Tape::sub(Var a, Var b) {
    require_same_shape(a->value, b->value, "sub");
    Tensor y = a->value;
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= b->value[i];
    bool rg = a->requires_grad || b->requires_grad;
    Var out = fresh("sub", std::move(y), rg);
    if (rg)
        out->backprop = [a, b](Node& self) {
            if (a->requires_grad) {
                ensure_grad(a);
                axpy(a->grad, self.grad);
            }
            if (b->requires_grad) {
                ensure_grad(b);
                for (std::size_t i = 0; i < self.grad.numel(); ++i) b->grad[i] -= self.grad[i];
            }
        };
    return out;
}

Var Tape::relu(Var x) {
    Tensor y = x->value;
    for (double& v : y.vec()) v = v > 0.0 ? v : 0.0;
    Var out = fresh("relu", std::move(y), x->requires_grad);
    if (x->requires_grad)
        out->backprop = [x](Node& self) {
            ensure_grad(x);
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                if (x->value[i] > 0.0) x->grad[i] += self.grad[i];
        };
    return out;
}

Var Tape::log(Var x) {
    Tensor y = x->value;
    for (double& v : y.vec()) v = std::log(v);
    Var out = fresh("log", std::move(y), x->requires_grad);
    if (x->requires_grad)
        out->backprop = [x](Node& self) {
            ensure_grad(x);
            for (std::size_t i = 0; i < self.grad.numel(); ++i)
                x->grad[i] += self.grad[i] / x->value[i];
        };
    return out;
}

Var Tape::scale(Var x, double c) {
    Tensor y = x->value;
    for (double& v : y.vec()) v *= c;
    Var out = fresh("scale", std::move(y), x->requires_grad);
    if (x->requires_grad)
        out->backprop = [x, c](Node& self) {
            ensure_grad(x);
            for (std::size_t i = 0; i < self.grad.numel(); ++i) x->grad[i] += c * self.grad[i];
        };
    return out;
}

Var Tape::gap(Var x) {
    if (x->value.ndim() != 3) throw ShapeError("gap: expected [c,h,w], got " + x->value.shape_str());
    const int c = x->value.dim(0), hw = x->value.dim(1) * x->value.dim(2);
    Tensor y({c});
    for (int ch = 0; ch < c; ++ch) {
        const double* p = x->value.data() + static_cast<std::size_t>(ch) * hw;
        double acc = 0.0;
        for (int i = 0; i < hw; ++i) acc += p[i];
        y[ch] = acc / hw;
    }
    Var out = fresh("gap", std::move(y), x->requires_grad);
    if (x->requires_grad)
        out->backprop = [x, c, hw](Node& self) {
            ensure_grad(x);
            for (int ch = 0; ch < c; ++ch) {
                const double g = self.grad[ch] / hw;
                double* p = x->grad.data() + static_cast<std::size_t>(ch) * hw;
                for (int i = 0; i < hw; ++i) p[i] += g;
            }
        };
    return out;
}

Var Tape::layernorm_rows(Var x, Var gain, Var bias, double eps) {
    if (x->value.ndim() != 2) throw ShapeError("layernorm: expected rows, got " + x->value.shape_str());
    const int t = x->value.dim(0), n = x->value.dim(1);
    if (gain->value.numel() != static_cast<std::size_t>(n) ||
        bias->value.numel() != static_cast<std::size_t>(n))
        throw ShapeError("layernorm: gain/bias size mismatch");
    Tensor y({t, n});
    Tensor xhat({t, n});
    std::vector<double> inv_std(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) {
        const double* xr = x->value.data() + static_cast<std::size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += xr[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (xr[j] - mu) * is;
            xhat[static_cast<std::size_t>(i) * n + j] = xh;
            y[static_cast<std::size_t>(i) * n + j] = gain->value[j] * xh + bias->value[j];
        }
    }
    bool rg = x->requires_grad || gain->requires_grad || bias->requires_grad;
    Var out = fresh("layernorm", std::move(y), rg);
    if (rg) {
        auto xh = std::make_shared<Tensor>(std::move(xhat));
        auto is = std::make_shared<std::vector<double>>(std::move(inv_std));
        out->backprop = [x, gain, bias, t, n, xh, is](Node& self) {
            for (int i = 0; i < t; ++i) {
                const double* gy = self.grad.data() + static_cast<std::size_t>(i) * n;
                const double* xr = xh->data() + static_cast<std::size_t>(i) * n;
                if (gain->requires_grad) {
                    ensure_grad(gain);
                    for (int j = 0; j < n; ++j) gain->grad[j] += gy[j] * xr[j];
                }
                if (bias->requires_grad) {
                    ensure_grad(bias);
                    for (int j = 0; j < n; ++j) bias->grad[j] += gy[j];
                }
                if (x->requires_grad) {
                    ensure_grad(x);
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double gj = gy[j] * gain->value[j];
                        m1 += gj;
                        m2 += gj * xr[j];
                    }
                    m1 /= n;
                    m2 /= n;
                    double* gx = x->grad.data() + static_cast<std::size_t>(i) * n;
                    const double s = (*is)[static_cast<std::size_t>(i)];
                    for (int j = 0; j < n; ++j) {
                        const double gj = gy[j] * gain->value[j];
                        gx[j] += s * (gj - m1 - xr[j] * m2);
                    }
                }
            }
        };
    }
    return out;
}

Var Tape::softmax_rows(Var x) {
    if (x->value.ndim() != 2) throw ShapeError("softmax_rows: got " + x->value.shape_str());
    const int t = x->value.dim(0), n = x->value.dim(1);
    Tensor y({t, n});
    for (int i = 0; i < t; ++i) {
        const double* xr = x->value.data() + static_cast<std::size_t>(i) * n;
        double mx = xr[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) z += std::exp(xr[j] - mx);
        for (int j = 0; j < n; ++j) y[static_cast<std::size_t>(i) * n + j] = std::exp(xr[j] - mx) / z;
    }
    Var out = fresh("softmax", std::move(y), x->requires_grad);
    if (x->requires_grad)
        out->backprop = [x, t, n](Node& self) {
            ensure_grad(x);
            for (int i = 0; i < t; ++i) {
                const double* yr = self.value.data() + static_cast<std::size_t>(i) * n;
                const double* gy = self.grad.data() + static_cast<std::size_t>(i) * n;
                double s = 0.0;
                for (int j = 0; j < n; ++j) s += yr[j] * gy[j];
                double* gx = x->grad.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) gx[j] += yr[j] * (gy[j] - s);
            }
        };
    return out;
}

Var Tape::softmax(Var x) {
    if (x->value.ndim() != 1) throw ShapeError("softmax: expected vector, got " + x->value.shape_str());
    const int n = static_cast<int>(x->value.numel());
    Var rows = fresh("view", Tensor({1, n}, x->value.vec()), x->requires_grad);
    if (x->requires_grad)
        rows->backprop = [x](Node& self) {
            ensure_grad(x);
            axpy(x->grad, Tensor(x->value.shape(), self.grad.vec()));
        };
    Var sm = softmax_rows(rows);
    Var out = fresh("view", Tensor({n}, sm->value.vec()), sm->requires_grad);
    if (sm->requires_grad)
        out->backprop = [sm, n](Node& self) {
            ensure_grad(sm);
            axpy(sm->grad, Tensor({1, n}, self.grad.vec()));
        };
    return out;
}

Var Tape::embed(Var table, const std::vector<int>& ids) {
    if (table->value.ndim() != 2) throw ShapeError("embed: table " + table->value.shape_str());
    const int v = table->value.dim(0), d = table->value.dim(1);
    const int t = static_cast<int>(ids.size());
    Tensor y({t, d});
    for (int i = 0; i < t; ++i) {
        const int id = ids[static_cast<std::size_t>(i)];
        if (id < 0 || id >= v) throw ParameterError("embed: token id out of range");
        std::memcpy(y.data() + static_cast<std::size_t>(i) * d,
                    table->value.data() + static_cast<std::size_t>(id) * d,
                    sizeof(double) * static_cast<std::size_t>(d));
    }
    Var out = fresh("embed", std::move(y), table->requires_grad);
    if (table->requires_grad) {
        auto ids_copy = std::make_shared<std::vector<int>>(ids);
        out->backprop = [table, ids_copy, d](Node& self) {
            ensure_grad(table);
            for (std::size_t i = 0; i < ids_copy->size(); ++i) {
                const int id = (*ids_copy)[i];
                for (int j = 0; j < d; ++j)
                    table->grad[static_cast<std::size_t>(id) * d + j] +=
                        self.grad[i * static_cast<std::size_t>(d) + j];
            }
        };
    }
    return out;
}

Var Tape::slice_rows(Var x, int begin, int count) {
    if (x->value.ndim() != 2 || begin < 0 || begin + count > x->value.dim(0))
        throw ShapeError("slice_rows: bad range on " + x->value.shape_str());
    const int n = x->value.dim(1);
    Tensor y({count, n});
    std::memcpy(y.data(), x->value.data() + static_cast<std::size_t>(begin) * n,
                sizeof(double) * y.numel());
    Var out = fresh("slice_rows", std::move(y), x->requires_grad);
    if (x->requires_grad)
        out->backprop = [x, begin, n](Node& self) {
            ensure_grad(x);
            const std::size_t off = static_cast<std::size_t>(begin) * n;
            for (std::size_t i = 0; i < self.grad.numel(); ++i) x->grad[off + i] += self.grad[i];
        };
    return out;
}

Var Tape::select_row(Var x, int row) {
    if (x->value.ndim() != 2 || row < 0 || row >= x->value.dim(0))
        throw ShapeError("select_row: bad row on " + x->value.shape_str());
    const int n = x->value.dim(1);
    Var sliced = slice_rows(x, row, 1);
    Var out = fresh("view", Tensor({n}, sliced->value.vec()), sliced->requires_grad);
    if (sliced->requires_grad)
        out->backprop = [sliced, n](Node& self) {
            ensure_grad(sliced);
            axpy(sliced->grad, Tensor({1, n}, self.grad.vec()));
        };
    return out;
}

Var Tape::concat_rows_as_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    const int t = parts[0]->value.dim(0);
    int total = 0;
    bool rg = false;
    for (Var p : parts) {
        if (p->value.ndim() != 2 || p->value.dim(0) != t)
            throw ShapeError("concat: row count mismatch " + p->value.shape_str());
        total += p->value.dim(1);
        rg = rg || p->requires_grad;
    }
    Tensor y({t, total});
    int col = 0;
    for (Var p : parts) {
        const int k = p->value.dim(1);
        for (int i = 0; i < t; ++i)
            std::memcpy(y.data() + static_cast<std::size_t>(i) * total + col,
                        p->value.data() + static_cast<std::size_t>(i) * k,
                        sizeof(double) * static_cast<std::size_t>(k));
        col += k;
    }
    Var out = fresh("concat", std::move(y), rg);
    if (rg) {
        auto parts_copy = std::make_shared<std::vector<Var>>(parts);
        out->backprop = [parts_copy, t, total](Node& self) {
            int col = 0;
            for (Var p : *parts_copy) {
                const int k = p->value.dim(1);
                if (p->requires_grad) {
                    ensure_grad(p);
                    for (int i = 0; i < t; ++i)
                        for (int j = 0; j < k; ++j)
                            p->grad[static_cast<std::size_t>(i) * k + j] +=
                                self.grad[static_cast<std::size_t>(i) * total + col + j];
                }
                col += k;
            }
        };
    }
    return out;
}

Var Tape::dot(Var a, Var b) {
    require_same_shape(a->value, b->value, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a->value.numel(); ++i) acc += a->value[i] * b->value[i];
    bool rg = a->requires_grad || b->requires_grad;
    Var out = fresh("dot", Tensor::scalar(acc), rg);
    if (rg)
        out->backprop = [a, b](Node& self) {
            const double g = self.grad[0];
            if (a->requires_grad) {
                ensure_grad(a);
                for (std::size_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g * b->value[i];
            }
            if (b->requires_grad) {
                ensure_grad(b);
                for (std::size_t i = 0; i < b->grad.numel(); ++i) b->grad[i] += g * a->value[i];
            }
        };
    return out;
}

Var Tape::norm(Var a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a->value.numel(); ++i) acc += a->value[i] * a->value[i];
    const double nrm = std::sqrt(acc);
    Var out = fresh("norm", Tensor::scalar(nrm), a->requires_grad);
    if (a->requires_grad)
        out->backprop = [a, nrm](Node& self) {
            if (nrm == 0.0) return;  // subgradient 0 at the origin
            ensure_grad(a);
            const double g = self.grad[0] / nrm;
            for (std::size_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g * a->value[i];
        };
    return out;
}

Var Tape::cosine(Var a, Var b) {
    Var na = norm(a);
    Var nb = norm(b);
    if (na->value.item() == 0.0 || nb->value.item() == 0.0)
        throw DegenerateInputError("cosine similarity of a zero vector");
    return s_div(dot(a, b), s_mul(na, nb));
}

Var Tape::select_elem(Var x, std::size_t i) {
    if (i >= x->value.numel()) throw ShapeError("select_elem: index out of range");
    Var out = fresh("select", Tensor::scalar(x->value[i]), x->requires_grad);
    if (x->requires_grad)
        out->backprop = [x, i](Node& self) {
            ensure_grad(x);
            x->grad[i] += self.grad[0];
        };
    return out;
}

Var Tape::neg_log_pick(Var probs, int index, double floor) {
    if (index < 0 || static_cast<std::size_t>(index) >= probs->value.numel())
        throw ParameterError("neg_log_pick: class index out of range");
    const double p = probs->value[static_cast<std::size_t>(index)];
    const bool floored = p < floor;
    Var out = fresh("neg_log_pick", Tensor::scalar(-std::log(std::max(p, floor))),
                    probs->requires_grad);
    if (probs->requires_grad)
        out->backprop = [probs, index, floor, floored](Node& self) {
            if (floored) return;  // flat in the clamped region
            ensure_grad(probs);
            const double p = probs->value[static_cast<std::size_t>(index)];
            probs->grad[static_cast<std::size_t>(index)] -=
                self.grad[0] / std::max(p, floor);
        };
    return out;
}

Var Tape::s_add(Var a, Var b) { return add(a, b); }
Var Tape::s_sub(Var a, Var b) { return sub(a, b); }

Var Tape::s_mul(Var a, Var b) {
    const double y = a->value.item() * b->value.item();
    bool rg = a->requires_grad || b->requires_grad;
    Var out = fresh("s_mul", Tensor::scalar(y), rg);
    if (rg)
        out->backprop = [a, b](Node& self) {
            const double g = self.grad[0];
            if (a->requires_grad) {
                ensure_grad(a);
                a->grad[0] += g * b->value[0];
            }
            if (b->requires_grad) {
                ensure_grad(b);
                b->grad[0] += g * a->value[0];
            }
        };
    return out;
}

Var Tape::s_div(Var a, Var b) {
    const double bv = b->value.item();
    bool rg = a->requires_grad || b->requires_grad;
    Var out = fresh("s_div", Tensor::scalar(a->value.item() / bv), rg);
    if (rg)
        out->backprop = [a, b, bv](Node& self) {
            const double g = self.grad[0];
            if (a->requires_grad) {
                ensure_grad(a);
                a->grad[0] += g / bv;
            }
            if (b->requires_grad) {
                ensure_grad(b);
                b->grad[0] -= g * a->value[0] / (bv * bv);
            }
        };
    return out;
}

Var Tape::hinge(Var s) { return relu(s); }

Var Tape::sum(const std::vector<Var>& terms) {
    if (terms.empty()) return zero_scalar();
    double acc = 0.0;
    bool rg = false;
    for (Var t : terms) {
        acc += t->value.item();
        rg = rg || t->requires_grad;
    }
    Var out = fresh("sum", Tensor::scalar(acc), rg);
    if (rg) {
        auto copy = std::make_shared<std::vector<Var>>(terms);
        out->backprop = [copy](Node& self) {
            for (Var t : *copy)
                if (t->requires_grad) {
                    ensure_grad(t);
                    t->grad[0] += self.grad[0];
                }
        };
    }
    return out;
}

Var Tape::zero_scalar() { return fresh("zero", Tensor::scalar(0.0), false); }

void Tape::backward(Var loss) {
    if (loss->value.numel() != 1) throw ShapeError("backward: loss must be scalar");
    ensure_grad(loss);
    loss->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = *it;
        if (n.has_grad && n.backprop) n.backprop(n);
    }
}

GradientSet Tape::gradients() const {
    GradientSet out;
    for (const Node& n : nodes_) {
        if (n.param.empty()) continue;
        auto it = out.find(n.param);
        if (it == out.end()) {
            out.emplace(n.param, n.has_grad ? n.grad : Tensor(n.value.shape()));
        } else if (n.has_grad) {
            axpy(it->second, n.grad);
        }
    }
    return out;
}

double finite_diff_check(ParameterStore& params,
                         const std::function<double(const ParameterStore&)>& forward,
                         const GradientSet& analytic, double epsilon, std::uint64_t seed,
                         int max_coords) {
    if (epsilon < 1e-7 || epsilon > 1e-3)
        throw ParameterError("finite_diff_check: epsilon outside [1e-7, 1e-3]");
    struct Coord {
        std::string name;
        std::size_t idx;
    };
    std::vector<Coord> all;
    for (const auto& e : params.entries())
        for (std::size_t i = 0; i < e.value.numel(); ++i) all.push_back({e.name, i});
    Rng rng(seed);
    // Fisher-Yates prefix shuffle to pick the subsample.
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(max_coords), all.size());
    for (std::size_t i = 0; i < take; ++i) {
        const std::size_t j = i + rng.uniform_int(all.size() - i);
        std::swap(all[i], all[j]);
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < take; ++i) {
        const Coord& c = all[i];
        double& theta = params.at(c.name)[c.idx];
        const double orig = theta;
        theta = orig + epsilon;
        const double fp = forward(params);
        theta = orig - epsilon;
        const double fm = forward(params);
        theta = orig;
        const double numeric = (fp - fm) / (2.0 * epsilon);
        double a = 0.0;
        auto it = analytic.find(c.name);
        if (it != analytic.end()) a = it->second[c.idx];
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace edemajoint::gradnet
