#pragma once

namespace dpt {

// psi(x) for x > 0.
double digamma(double x);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

// P(T <= t) for Student's t with `df` degrees of freedom.
double student_t_cdf(double t, double df);

}  // namespace dpt
