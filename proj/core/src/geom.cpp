#include "farpose/geom.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SVD>

namespace farpose::geom {

bool is_rotation(const Mat3& R, double tol) {
    return (R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < tol &&
           std::abs(R.determinant() - 1.0) < tol;
}

Mat3 axis_angle_to_matrix(const Vec3& aa) {
    double angle = aa.norm();
    if (angle < 1e-14) return Mat3::Identity();
    return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

Vec3 matrix_to_axis_angle(const Mat3& R) {
    Eigen::AngleAxisd a(R);
    return a.angle() * a.axis();
}

Mat3 rot_x(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitX()).toRotationMatrix(); }
Mat3 rot_y(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitY()).toRotationMatrix(); }
Mat3 rot_z(double rad) { return Eigen::AngleAxisd(rad, Vec3::UnitZ()).toRotationMatrix(); }

Rot6d rot6d_from_matrix(const Mat3& R) {
    Rot6d v;
    v << R.col(0), R.col(1);
    return v;
}

Mat3 matrix_from_rot6d(const Rot6d& v) {
    Vec3 a = v.head<3>();
    Vec3 b = v.tail<3>();
    double na = a.norm();
    if (na < 1e-12) throw DegenerateInput("rot6d: first column near zero");
    Vec3 c0 = a / na;
    Vec3 b_orth = b - b.dot(c0) * c0;
    double nb = b_orth.norm();
    if (nb < 1e-9 * std::max(1.0, b.norm()))
        throw DegenerateInput("rot6d: columns parallel");
    Vec3 c1 = b_orth / nb;
    Mat3 R;
    R.col(0) = c0;
    R.col(1) = c1;
    R.col(2) = c0.cross(c1);
    return R;
}

double geodesic_deg(const Mat3& Ra, const Mat3& Rb) {
    double c = ((Ra.transpose() * Rb).trace() - 1.0) / 2.0;
    c = std::clamp(c, -1.0, 1.0);
    return rad2deg(std::acos(c));
}

SimilarityTransform SimilarityTransform::inverse() const {
    // q = s (R p + t)  =>  p = (1/s) (R^T q + (-s R^T t))
    SimilarityTransform inv;
    inv.s = 1.0 / s;
    inv.R = R.transpose();
    inv.t = -s * (R.transpose() * t);
    return inv;
}

void Camera::validate() const {
    if (fx <= 0 || fy <= 0) throw ConfigError("camera: fx, fy must be positive");
    if (cx < 0 || cx >= width || cy < 0 || cy >= height)
        throw ConfigError("camera: principal point outside image");
    if (model == CameraModel::FisheyeEquidistant && fov_deg > 180.0)
        throw ConfigError("camera: fisheye FoV exceeds 180 degrees");
    if (!is_rotation(R, 1e-6)) throw ConfigError("camera: extrinsic R not a rotation");
}

Projection project(const Camera& cam, const Vec3& p_world) {
    Vec3 pc = cam.R * p_world + cam.t;
    Projection out;
    if (cam.model == CameraModel::Pinhole) {
        if (pc.z() <= 1e-12) return out;  // behind camera
        out.px.x() = cam.fx * pc.x() / pc.z() + cam.cx;
        out.px.y() = cam.fy * pc.y() / pc.z() + cam.cy;
    } else {
        double rho = std::hypot(pc.x(), pc.y());
        double phi = std::atan2(rho, pc.z());
        if (phi > deg2rad(cam.fov_deg) / 2.0) return out;
        if (rho < 1e-14) {
            out.px = Vec2(cam.cx, cam.cy);
        } else {
            out.px.x() = cam.cx + cam.fx * phi * pc.x() / rho;
            out.px.y() = cam.cy + cam.fy * phi * pc.y() / rho;
        }
    }
    out.visible = out.px.x() >= 0 && out.px.x() < cam.width && out.px.y() >= 0 &&
                  out.px.y() < cam.height;
    return out;
}

Vec3 unproject(const Camera& cam, const Vec2& px) {
    double x = (px.x() - cam.cx) / cam.fx;
    double y = (px.y() - cam.cy) / cam.fy;
    if (cam.model == CameraModel::Pinhole) {
        return Vec3(x, y, 1.0).normalized();
    }
    double phi = std::hypot(x, y);  // equidistant: radial angle in radians
    if (phi < 1e-14) return Vec3(0, 0, 1);
    double s = std::sin(phi) / phi;
    return Vec3(s * x, s * y, std::cos(phi));
}

Vec3 ray_direction(const Camera& cam, const Vec3& p_world) {
    Vec3 d = cam.R * p_world + cam.t;  // p_world - center, rotated into camera frame
    double n = d.norm();
    if (n < 1e-14) throw DegenerateInput("ray_direction: point at camera center");
    return d / n;
}

TriangulationResult triangulate(const std::vector<Ray>& rays) {
    if (rays.size() < 2) throw DegenerateInput("triangulate: need at least 2 rays");
    Mat3 A = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    for (const Ray& r : rays) {
        Mat3 P = Mat3::Identity() - r.dir * r.dir.transpose();
        A += P;
        b += P * r.origin;
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es(A);
    if (es.eigenvalues().minCoeff() < 1e-9 * std::max(1.0, es.eigenvalues().maxCoeff()))
        throw DegenerateInput("triangulate: rays are parallel");
    Vec3 x = A.ldlt().solve(b);
    double ss = 0;
    for (const Ray& r : rays) {
        Vec3 d = (Mat3::Identity() - r.dir * r.dir.transpose()) * (x - r.origin);
        ss += d.squaredNorm();
    }
    return {x, std::sqrt(ss / static_cast<double>(rays.size()))};
}

SimilarityTransform umeyama(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
    if (src.size() != dst.size()) throw DegenerateInput("umeyama: length mismatch");
    const size_t n = src.size();
    if (n < 3) throw DegenerateInput("umeyama: need at least 3 correspondences");

    Vec3 mu_s = Vec3::Zero(), mu_d = Vec3::Zero();
    for (size_t i = 0; i < n; ++i) {
        mu_s += src[i];
        mu_d += dst[i];
    }
    mu_s /= static_cast<double>(n);
    mu_d /= static_cast<double>(n);

    Mat3 cov = Mat3::Zero();
    double var_s = 0;
    for (size_t i = 0; i < n; ++i) {
        Vec3 ds = src[i] - mu_s;
        cov += (dst[i] - mu_d) * ds.transpose();
        var_s += ds.squaredNorm();
    }
    cov /= static_cast<double>(n);
    var_s /= static_cast<double>(n);

    Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
    // Collinear sources leave the two smallest singular values at zero and the
    // rotation underdetermined.
    if (svd.singularValues()(1) < 1e-12 * std::max(1.0, svd.singularValues()(0)))
        throw DegenerateInput("umeyama: source points are collinear");

    Vec3 d_sign = Vec3::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d_sign(2) = -1;

    SimilarityTransform T;
    T.R = svd.matrixU() * d_sign.asDiagonal() * svd.matrixV().transpose();
    T.s = svd.singularValues().dot(d_sign) / var_s;
    if (T.s <= 0) throw DegenerateInput("umeyama: non-positive scale");
    // dst ~ s (R src + t)  =>  t = mu_d / s - R mu_s  (expressed pre-scale)
    T.t = mu_d / T.s - T.R * mu_s;
    return T;
}

namespace {

// Numerical Jacobian of the pixel residual w.r.t. a left-multiplied axis-angle
// increment on R and an additive increment on t.
Eigen::Matrix<double, 2, 6> reproj_jacobian(const Camera& cam, const Vec3& p) {
    const double h = 1e-6;
    Eigen::Matrix<double, 2, 6> J;
    for (int k = 0; k < 6; ++k) {
        Camera cp = cam, cm = cam;
        if (k < 3) {
            Vec3 aa = Vec3::Zero();
            aa(k) = h;
            cp.R = axis_angle_to_matrix(aa) * cam.R;
            cm.R = axis_angle_to_matrix(-aa) * cam.R;
        } else {
            cp.t(k - 3) += h;
            cm.t(k - 3) -= h;
        }
        J.col(k) = (project(cp, p).px - project(cm, p).px) / (2 * h);
    }
    return J;
}

}  // namespace

PnpResult pnp_markers(const std::vector<std::pair<Vec3, Vec2>>& corrs,
                      const Camera& intrinsics, int max_iter) {
    if (corrs.size() < 4) throw DegenerateInput("pnp: need at least 4 correspondences");
    const size_t n = corrs.size();

    Vec3 mu = Vec3::Zero();
    for (auto& [p, px] : corrs) mu += p;
    mu /= static_cast<double>(n);
    Mat3 C = Mat3::Zero();
    for (auto& [p, px] : corrs) C += (p - mu) * (p - mu).transpose();
    Eigen::SelfAdjointEigenSolver<Mat3> es(C);
    if (es.eigenvalues()(1) < 1e-12 * std::max(1.0, es.eigenvalues()(2)))
        throw DegenerateInput("pnp: markers are collinear");

    std::vector<Vec3> dirs(n);
    for (size_t i = 0; i < n; ++i) {
        dirs[i] = unproject(intrinsics, corrs[i].second);
        if (dirs[i].z() < 1e-9)
            throw DegenerateInput("pnp: observation beyond 90 deg off-axis");
    }

    auto project_so3 = [](const Mat3& M) {
        Eigen::JacobiSVD<Mat3> s(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
        Vec3 d = Vec3::Ones();
        if ((s.matrixU() * s.matrixV().transpose()).determinant() < 0) d(2) = -1;
        return Mat3(s.matrixU() * d.asDiagonal() * s.matrixV().transpose());
    };
    auto reproj_err2 = [&](const Camera& c) {
        double e = 0;
        for (auto& [p, px] : corrs) e += (project(c, p).px - px).squaredNorm();
        return e;
    };

    Camera cam = intrinsics;
    const bool planar =
        es.eigenvalues()(0) < 1e-8 * std::max(1.0, es.eigenvalues()(2));
    if (planar) {
        // Coplanar markers determine only a plane-to-bearing homography;
        // decompose it into the two candidate poses and keep the one with
        // points in front and the lower reprojection error.
        Vec3 e1 = es.eigenvectors().col(2), e2 = es.eigenvectors().col(1);
        Eigen::MatrixXd A(2 * n, 9);
        for (size_t i = 0; i < n; ++i) {
            Eigen::RowVector3d q((corrs[i].first - mu).dot(e1),
                                 (corrs[i].first - mu).dot(e2), 1.0);
            const Vec3& d = dirs[i];
            A.row(2 * i).setZero();
            A.row(2 * i + 1).setZero();
            A.block<1, 3>(2 * i, 3) = -d.z() * q;
            A.block<1, 3>(2 * i, 6) = d.y() * q;
            A.block<1, 3>(2 * i + 1, 0) = d.z() * q;
            A.block<1, 3>(2 * i + 1, 6) = -d.x() * q;
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
        Eigen::VectorXd h = svd.matrixV().col(8);
        Vec3 h1(h(0), h(3), h(6)), h2(h(1), h(4), h(7)), h3(h(2), h(5), h(8));
        const double scale = 0.5 * (h1.norm() + h2.norm());
        if (scale < 1e-12) throw DegenerateInput("pnp: degenerate homography");

        Mat3 Bw;
        Bw.col(0) = e1;
        Bw.col(1) = e2;
        Bw.col(2) = e1.cross(e2);
        double best = -1;
        for (double sign : {1.0, -1.0}) {
            Vec3 r1 = sign * h1 / scale, r2 = sign * h2 / scale;
            Mat3 Bc;
            Bc.col(0) = r1;
            Bc.col(1) = r2;
            Bc.col(2) = r1.cross(r2);
            Camera cand = intrinsics;
            cand.R = project_so3(Bc) * Bw.transpose();
            cand.t = sign * h3 / scale - cand.R * mu;
            double front = 0;
            for (size_t i = 0; i < n; ++i)
                front += dirs[i].dot(cand.R * corrs[i].first + cand.t);
            if (front <= 0) continue;
            double e = reproj_err2(cand);
            if (best < 0 || e < best) {
                best = e;
                cam = cand;
            }
        }
        if (best < 0) throw DegenerateInput("pnp: no pose with points in front");
    } else {
        // General DLT on bearing cross-product constraints for [R|t].
        Eigen::MatrixXd A(2 * n, 12);
        for (size_t i = 0; i < n; ++i) {
            const Vec3& P = corrs[i].first;
            Eigen::RowVector4d Ph(P.x(), P.y(), P.z(), 1.0);
            const Vec3& d = dirs[i];
            A.row(2 * i).setZero();
            A.row(2 * i + 1).setZero();
            A.block<1, 4>(2 * i, 4) = -d.z() * Ph;
            A.block<1, 4>(2 * i, 8) = d.y() * Ph;
            A.block<1, 4>(2 * i + 1, 0) = d.z() * Ph;
            A.block<1, 4>(2 * i + 1, 8) = -d.x() * Ph;
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeThinV);
        Eigen::VectorXd h = svd.matrixV().col(11);
        Mat3 M;
        M << h(0), h(1), h(2), h(4), h(5), h(6), h(8), h(9), h(10);
        Vec3 tv(h(3), h(7), h(11));

        double front = 0;
        for (size_t i = 0; i < n; ++i)
            front += dirs[i].dot(M * corrs[i].first + tv);
        if (front < 0) {
            M = -M;
            tv = -tv;
        }
        if (M.determinant() < 1e-12)
            throw DegenerateInput("pnp: degenerate DLT solution");
        Eigen::JacobiSVD<Mat3> rs(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
        cam.R = project_so3(M);
        cam.t = tv / rs.singularValues().mean();
    }

    // Gauss-Newton with Levenberg damping on pixel residuals.
    double lambda = 1e-4;
    auto total_err2 = [&](const Camera& c) {
        double e = 0;
        for (auto& [p, px] : corrs) e += (project(c, p).px - px).squaredNorm();
        return e;
    };
    double err = total_err2(cam);
    bool converged = false;
    for (int it = 0; it < max_iter; ++it) {
        Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
        Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
        for (auto& [p, px] : corrs) {
            Eigen::Matrix<double, 2, 6> J = reproj_jacobian(cam, p);
            Vec2 r = project(cam, p).px - px;
            H += J.transpose() * J;
            g += J.transpose() * r;
        }
        Eigen::Matrix<double, 6, 1> step =
            (H + lambda * Eigen::Matrix<double, 6, 6>(H.diagonal().asDiagonal()))
                .ldlt()
                .solve(-g);
        Camera trial = cam;
        trial.R = axis_angle_to_matrix(step.head<3>()) * cam.R;
        trial.t = cam.t + step.tail<3>();
        double trial_err = total_err2(trial);
        if (trial_err < err) {
            cam = trial;
            err = trial_err;
            lambda = std::max(lambda * 0.5, 1e-12);
        } else {
            lambda *= 10.0;
        }
        if (step.norm() < 1e-10) {
            converged = true;
            break;
        }
    }
    if (!converged) throw NoConvergence("pnp: refinement did not converge");

    PnpResult out;
    out.pose = {cam.R, cam.t, Frame::Camera};
    out.rms_reproj_px = std::sqrt(err / static_cast<double>(n));
    return out;
}

}  // namespace farpose::geom
