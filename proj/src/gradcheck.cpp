#include "dfb/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace dfb {

namespace {

double evaluate(const LossBuilder& loss, std::vector<Tensor>& params)
{
    Graph g;
    std::vector<Var> vars;
    vars.reserve(params.size());
    for (Tensor& p : params) vars.push_back(g.constant(p.detached()));
    return loss(g, vars).value().item();
}

}  // namespace

double grad_check(const LossBuilder& loss, std::vector<Tensor>& params, double epsilon)
{
    for (Tensor& p : params) p.set_requires_grad(true);
    {
        Graph g;
        std::vector<Var> vars;
        for (Tensor& p : params) vars.push_back(g.parameter(p));
        g.backward(loss(g, vars));
    }

    double worst = 0.0;
    for (Tensor& p : params) {
        for (std::size_t i = 0; i < p.numel(); ++i) {
            const double saved = p[i];
            p[i] = saved + epsilon;
            const double up = evaluate(loss, params);
            p[i] = saved - epsilon;
            const double down = evaluate(loss, params);
            p[i] = saved;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double analytic = p.grad()[i];
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            worst = std::max(worst, std::abs(analytic - numeric) / denom);
        }
    }
    return worst;
}

}  // namespace dfb
