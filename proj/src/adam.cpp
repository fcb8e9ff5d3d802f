#include "calvin/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace calvin {

void Adam::step_param(const std::string& name, Tensor& param, const Tensor& grad) {
    if (!param.same_shape(grad))
        throw std::invalid_argument("adam_step: gradient shape " +
                                    Tensor::shape_str(grad.shape()) + " does not match parameter '" +
                                    name + "' " + Tensor::shape_str(param.shape()));
    auto mit = m_.find(name);
    if (mit == m_.end()) {
        mit = m_.emplace(name, Tensor(param.shape())).first;
        v_.emplace(name, Tensor(param.shape()));
    }
    Tensor& m = mit->second;
    Tensor& v = v_.at(name);
    if (!m.same_shape(param))
        throw std::invalid_argument("adam_step: stale moment shape for '" + name + "'");

    const double t = static_cast<double>(step_ + 1);
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg_.beta1), t);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg_.beta2), t);
    for (size_t i = 0; i < param.numel(); ++i) {
        m[i] = cfg_.beta1 * m[i] + (1.0f - cfg_.beta1) * grad[i];
        v[i] = cfg_.beta2 * v[i] + (1.0f - cfg_.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
}

std::map<std::string, Tensor> Adam::state() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, t] : m_) out["adam.m." + name] = t;
    for (const auto& [name, t] : v_) out["adam.v." + name] = t;
    out["adam.step"] = Tensor::scalar(static_cast<float>(step_));
    return out;
}

void Adam::load_state(const std::map<std::string, Tensor>& state) {
    m_.clear();
    v_.clear();
    step_ = 0;
    for (const auto& [name, t] : state) {
        if (name.rfind("adam.m.", 0) == 0) {
            m_[name.substr(7)] = t;
        } else if (name.rfind("adam.v.", 0) == 0) {
            v_[name.substr(7)] = t;
        } else if (name == "adam.step") {
            step_ = static_cast<int64_t>(t[0]);
        }
    }
}

}  // namespace calvin
