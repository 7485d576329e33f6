"""
===================================
Training on projections, end to end
===================================

Ten desk-scale phantoms, eight for training and two held out. The
projection pipeline trains a 2D UNet on [CVP, AvgIP, MIP] images against
the projected masks and is scored in the same projected space.
"""
from ipseg.trainer import HyperParams, PhantomSpec, evaluate, make_dataset, phantom_suite, train

data = make_dataset(phantom_suite(10, PhantomSpec(), seed=0), split_ratio=0.8, seed=0)
print("split", data.counts())

hp = HyperParams(epochs=30, width_factor=0.125, seed=0)
untrained, _ = train("ip", None, data, HyperParams(epochs=0, width_factor=0.125))
print("untrained DSC", round(evaluate(untrained, data).dsc, 3))

ckpt, history = train("ip", None, data, hp,
                      on_epoch=lambda row: print(f"epoch {row[0]:3d}  loss {row[1]:.4f}"))
report = evaluate(ckpt, data)
print("held-out DSC", round(report.dsc, 3))
print("recall,precision,dsc")
print(report.to_csv_row())
