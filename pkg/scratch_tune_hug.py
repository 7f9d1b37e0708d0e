"""Dev scratch: tune prehug/hug arm postures so the attachment condition holds
on the default cylinder. Not part of the package."""
import numpy as np
from wbm import robot
from wbm.geometry import capsules_from_spec, object_sdf_world
from wbm.robot import default_humanoid, fk_batch

spec = default_humanoid()
OBJ_R, OBJ_H = 0.21, 0.40


def posture_from(arm6, waist_pitch):
    q = np.zeros(27)
    q[12:15] = (0.0, 0.0, waist_pitch)
    q[15:21] = arm6
    mirror = np.array([1, -1, -1, 1, -1, 1])
    q[21:27] = np.asarray(arm6) * mirror
    return q


def contact_eval(q, standoff, eps=0.02, n_samp=9):
    root_pos = np.array([[0.0, 0.0, spec.root_height]])
    root_quat = np.array([[1.0, 0.0, 0.0, 0.0]])
    pos, quat = fk_batch(spec, root_pos, root_quat, q[None])
    obj_pos = np.array([standoff, 0.0, 1.0])
    obj_quat = np.array([1.0, 0.0, 0.0, 0.0])
    posed = capsules_from_spec(spec, pos[0], quat[0], spec.upper_body_links)
    ts = np.linspace(0.0, 1.0, n_samp)
    contacts = []
    dists = []
    normals = []
    for k in range(posed.count):
        samp = posed.seg_a[k][None] + ts[:, None] * (posed.seg_b[k] - posed.seg_a[k])[None]
        sd = object_sdf_world("cylinder", (OBJ_R, OBJ_H), obj_pos, obj_quat, samp) - posed.radii[k]
        j = int(np.argmin(sd))
        dists.append(float(sd[j]))
        if sd[j] < eps:
            contacts.append(spec.upper_body_links[k])
            v = samp[j] - obj_pos
            n = np.array([v[0], v[1]])
            if np.linalg.norm(n) > 1e-9:
                normals.append(n / np.linalg.norm(n))
    squeeze = False
    if len(normals) >= 2:
        ang = np.sort(np.arctan2([n[1] for n in normals], [n[0] for n in normals]))
        gaps = np.diff(np.concatenate([ang, [ang[0] + 2 * np.pi]]))
        squeeze = float(np.max(gaps)) <= np.pi + 1e-12
    attached = len(contacts) >= 3 and squeeze
    # hands near object surface bonus for r_arm sanity
    hand_pts = []
    for h in spec.hand_links:
        lp, lq = pos[0, h], quat[0, h]
        from wbm.rotations import quat_rotate
        hand_pts.append(lp + quat_rotate(lq, spec.links[h].capsule.b))
    hand_d = [float(object_sdf_world("cylinder", (OBJ_R, OBJ_H), obj_pos, obj_quat, hp[None])[0]) for hp in hand_pts]
    return attached, contacts, dists, hand_d


def score(q, standoff):
    attached, contacts, dists, hand_d = contact_eval(q, standoff)
    # want: attached, several contacts, mild penetration only, hands close
    d = np.array(dists)
    pen = np.minimum(d, 0.0)
    s = 0.0
    s += 10.0 * len(contacts)
    s += 100.0 if attached else 0.0
    s -= 40.0 * float(np.sum(np.maximum(-pen - 0.06, 0.0)))  # discourage deep clipping
    s -= 5.0 * sum(abs(h) for h in hand_d)
    return s


rng = np.random.default_rng(7)
standoff = 0.32
best = np.array([-1.25, 0.1, 1.1, -1.5, 0.0, 0.0])
wp = 0.25
best_s = score(posture_from(best, wp), standoff)
print("init", best_s, contact_eval(posture_from(best, wp), standoff)[:2])

lo = np.array([-2.8, -2.2, -2.2, -2.4, -1.5, -1.2])
hi = np.array([1.6, 2.2, 2.2, 0.1, 1.5, 1.2])
for it in range(4000):
    scale = 0.6 if it < 2000 else 0.15
    cand = np.clip(best + rng.normal(0, scale, 6), lo, hi)
    cwp = float(np.clip(wp + rng.normal(0, 0.1 * scale), -0.5, 1.0))
    s = score(posture_from(cand, cwp), standoff)
    if s > best_s:
        best_s, best, wp = s, cand, cwp
att, con, dists, hand_d = contact_eval(posture_from(best, wp), standoff)
print("best score", best_s)
print("arm:", np.round(best, 3).tolist(), "waist_pitch:", round(wp, 3))
print("attached:", att, "contacts:", con)
print("hand obj sdf:", np.round(hand_d, 3).tolist())
print("link dists:", {spec.links[spec.upper_body_links[k]].name: round(dists[k], 3) for k in range(15)})
