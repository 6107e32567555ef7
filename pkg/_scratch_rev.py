import numpy as np
from mapflux import model as M, spectral as S, fluctuation as F, simulate as sim
from mapflux.rng import derive_seed

m2 = M.m2()
dm2 = M.dual(m2)
fund = S.fundamental(m2, check_dual=False)
pi, q = fund.pi, m2.kill
consts = F.reversal_constants(fund)
N = 150_000
alpha, beta = 0.5, np.array([0.2, 0.1])
n = 2


def cond_mean(vals, sel_cond, sel_target):
    # mean of vals*1{target} given cond, with its standard error
    m_ = sel_cond.sum()
    v = np.where(sel_cond & sel_target, vals, 0.0)[sel_cond]
    mu = v.mean()
    se = v.std(ddof=1) / np.sqrt(m_)
    return mu, se


def joint_mean(vals, sel):
    v = np.where(sel, vals, 0.0)
    return v.mean(), v.std(ddof=1) / np.sqrt(v.size)


print("=== rev_inf ===")
lhs = np.zeros((n, n))
lhs_se = np.zeros((n, n))
for i in range(n):
    blk = sim.summaries(m2, derive_seed(77, 1, i), i, N)
    vals = np.exp(alpha * blk.inf_x - blk.inf_occ @ beta)
    for j in range(n):
        mu, se = joint_mean(vals, blk.inf_phase == j)
        lhs[i, j] = pi[i] * q[i] * mu
        lhs_se[i, j] = pi[i] * q[i] * se

rhs = np.zeros((n, n))
rhs_se = np.zeros((n, n))
pool = [sim.summaries(dm2, derive_seed(77, 2, sp), sp, N) for sp in range(n)]
post_x = np.concatenate([b.x_end - b.sup_x for b in pool])
post_occ = np.concatenate([b.occ - b.sup_occ for b in pool])
post_j = np.concatenate([b.j_end for b in pool])
sup_j = np.concatenate([b.sup_phase for b in pool])
vals = np.exp(alpha * post_x - post_occ @ beta)
for j in range(n):
    for i in range(n):
        mu, se = cond_mean(vals, sup_j == j, post_j == i)
        rhs[j, i] = consts.dual_sup_mass[j] * mu
        rhs_se[j, i] = consts.dual_sup_mass[j] * se
z = np.abs(lhs - rhs.T) / np.sqrt(lhs_se**2 + rhs_se.T**2)
print("lhs:", lhs.round(5))
print("rhs^T:", rhs.T.round(5))
print("z:", z.round(2))

print("=== MC inf-phase mass vs analytic ===")
c_mc = np.zeros(n)
for i in range(n):
    blk = sim.summaries(m2, derive_seed(77, 1, i), i, N)
    for j in range(n):
        c_mc[j] += pi[i] * q[i] * (blk.inf_phase == j).mean()
print("analytic:", consts.inf_mass, "mc:", c_mc)

print("=== rev_last (a=0) ===")
beta_l = np.array([0.2, 0.1])
lhs = np.zeros((n, n)); lhs_se = np.zeros((n, n))
for i in range(n):
    blk = sim.summaries(m2, derive_seed(78, 1, i), i, N, sigma_level=0.0)
    ok = blk.sigma_cont & ~blk.sigma_at_zeta
    vals = np.exp(-blk.sigma_occ @ beta_l)
    for j in range(n):
        mu, se = joint_mean(vals, ok & (blk.sigma_phase == j))
        lhs[i, j] = consts.creep_mass[i] * mu
        lhs_se[i, j] = consts.creep_mass[i] * se
rhs = np.zeros((n, n)); rhs_se = np.zeros((n, n))
for j in range(n):
    blk = sim.summaries(dm2, derive_seed(78, 2, j), j, N, sigma_level=0.0)
    ok = blk.sigma_cont & ~blk.sigma_at_zeta
    vals = np.exp(-blk.sigma_occ @ beta_l)
    for i in range(n):
        mu, se = joint_mean(vals, ok & (blk.sigma_phase == i))
        rhs[j, i] = consts.dual_creep_mass[j] * mu
        rhs_se[j, i] = consts.dual_creep_mass[j] * se
z = np.abs(lhs - rhs.T) / np.sqrt(lhs_se**2 + rhs_se.T**2)
print("lhs:", lhs.round(5))
print("rhs^T:", rhs.T.round(5))
print("z:", z.round(2))

print("=== rev_first (x=1) ===")
xlev = 1.0
lhs = np.zeros((n, n)); lhs_se = np.zeros((n, n))
for i in range(n):
    blk = sim.summaries(m2, derive_seed(79, 1, i), i, N, tau_level=xlev)
    ok = blk.tau_hit & blk.tau_creep
    vals = np.exp(-blk.tau_occ @ beta_l)
    for j in range(n):
        mu, se = joint_mean(vals, ok & (blk.tau_phase == j))
        lhs[i, j] = consts.creep_mass[i] * mu
        lhs_se[i, j] = consts.creep_mass[i] * se
# RHS: dual post-infimum up to its last exit from x, two passes
rhs = np.zeros((n, n)); rhs_se = np.zeros((n, n))
p_x, p_occ, p_sig_j, p_ok, p_infj = [], [], [], [], []
for sp in range(n):
    sd = derive_seed(79, 2, sp)
    b1 = sim.summaries(dm2, sd, sp, N)
    b2 = sim.summaries(dm2, sd, sp, N, sigma_level=b1.inf_x + xlev)
    assert np.array_equal(b1.zeta, b2.zeta)
    ok = b2.sigma_cont & ~b2.sigma_at_zeta & (b2.sigma_t >= b1.inf_t)
    p_ok.append(ok)
    p_occ.append(b2.sigma_occ - b1.inf_occ)
    p_sig_j.append(b2.sigma_phase)
    p_infj.append(b1.inf_phase)
ok = np.concatenate(p_ok)
occp = np.concatenate(p_occ)
sigj = np.concatenate(p_sig_j)
infj = np.concatenate(p_infj)
vals = np.exp(-occp @ beta_l)
for j in range(n):
    for i in range(n):
        mu, se = cond_mean(np.where(ok, vals, 0.0), infj == j, ok & (sigj == i))
        rhs[j, i] = consts.creep_mass[j] * mu
        rhs_se[j, i] = consts.creep_mass[j] * se
z = np.abs(lhs - rhs.T) / np.sqrt(lhs_se**2 + rhs_se.T**2)
print("lhs:", lhs.round(5))
print("rhs^T:", rhs.T.round(5))
print("z:", z.round(2))

print("=== timerev1 (t=1) and timerev2 ===")
t_fix, a_tr = 1.0, -0.3
lhs = np.zeros((n, n)); lhs_se = np.zeros((n, n))
rhs = np.zeros((n, n)); rhs_se = np.zeros((n, n))
l2 = np.zeros((n, n)); l2_se = np.zeros((n, n))
r2 = np.zeros((n, n)); r2_se = np.zeros((n, n))
for i in range(n):
    blk = sim.summaries(m2, derive_seed(80, 1, i), i, N, t_fix=t_fix)
    vals = np.where(blk.fix_alive, np.exp(a_tr * blk.fix_x - blk.fix_occ @ beta_l), 0.0)
    ve = np.exp(a_tr * blk.x_end - blk.occ @ beta_l)
    for j in range(n):
        mu, se = joint_mean(vals, blk.fix_alive & (blk.fix_phase == j))
        lhs[i, j] = pi[i] * mu; lhs_se[i, j] = pi[i] * se
        mu, se = joint_mean(ve, blk.j_end == j)
        l2[i, j] = pi[i] * q[i] * mu; l2_se[i, j] = pi[i] * q[i] * se
    dblk = sim.summaries(dm2, derive_seed(80, 2, i), i, N, t_fix=t_fix)
    dvals = np.where(dblk.fix_alive, np.exp(a_tr * dblk.fix_x - dblk.fix_occ @ beta_l), 0.0)
    dve = np.exp(a_tr * dblk.x_end - dblk.occ @ beta_l)
    for j in range(n):
        mu, se = joint_mean(dvals, dblk.fix_alive & (dblk.fix_phase == j))
        rhs[i, j] = pi[i] * mu; rhs_se[i, j] = pi[i] * se
        mu, se = joint_mean(dve, dblk.j_end == j)
        r2[i, j] = pi[i] * q[i] * mu; r2_se[i, j] = pi[i] * q[i] * se
z1 = np.abs(lhs - rhs.T) / np.sqrt(lhs_se**2 + rhs_se.T**2)
z2 = np.abs(l2 - r2.T) / np.sqrt(l2_se**2 + r2_se.T**2)
print("timerev1 z:", z1.round(2))
print("timerev2 z:", z2.round(2))
