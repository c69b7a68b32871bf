"""High-precision evaluation of the combined-margin softmax closed form.

N=1, two classes, cos(target)=0.9, cos(other)=0.1, s=32, m1=0.2, m2=0.1.
Also the geometric margin-schedule midpoint.
"""
from mpmath import mp, mpf, acos, cos, exp, log, sqrt

mp.dps = 50
s, m1, m2 = mpf(32), mpf("0.2"), mpf("0.1")
ct, co = mpf("0.9"), mpf("0.1")
target = s * (cos(acos(ct) + m1) - m2)
other = s * co
loss = -log(exp(target) / (exp(target) + exp(other)))
print("target logit =", target)
print("loss =", mp.nstr(loss, 20))
print("plain softmax CE (m1=m2=0) =", mp.nstr(-log(exp(s * ct) / (exp(s * ct) + exp(s * co))), 20))
print("exp schedule midpoint =", mp.nstr(mpf("0.2") * (mpf("0.8") / mpf("0.2")) ** mpf("0.5"), 20))
