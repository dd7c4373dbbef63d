"""Scratch calibration for the end-to-end low-resource run. Not shipped."""
import sys
import time

from relcon.corpus import SyntheticWorldConfig, generate_synthetic_world, split_documents, pairs_for_documents
from relcon.evaluation import probe, run_low_resource_cell
from relcon.mining import compute_pair_stats, select_pretraining_pairs
from relcon.trainer import TrainConfig, new_random_checkpoint, pretrain

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 300
ft_epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 60

t0 = time.time()
world = generate_synthetic_world(SyntheticWorldConfig(docs=300, seed=0))
splits = split_documents(world.documents, seed=0)
train_docs = [d for d in world.documents if d.id in set(splits["train"])]
sel = select_pretraining_pairs(compute_pair_stats(train_docs), 3, 150)

pre_cfg = TrainConfig(epochs=50, batch_size=16, learning_rate=1e-3, tau=0.05,
                      max_steps=steps, seed=0)
mtb = pretrain(train_docs, sel, pre_cfg, log_path="/tmp/pre_cal.csv",
               vocab_documents=world.documents)
rows = open("/tmp/pre_cal.csv").read().strip().splitlines()
print("last loss row:", rows[-1])
print(f"pretrain: {mtb.step} steps, {time.time()-t0:.0f}s")

train_pairs = pairs_for_documents(world.pairs, splits["train"])
test_pairs = pairs_for_documents(world.pairs, splits["test"])
rep = probe(mtb, world.documents, train_pairs, test_pairs, world.inventory, k=5)
print("full-label probe mtb:", {k: round(v, 3) for k, v in rep.items()})

ft = TrainConfig(objective="mccl", epochs=ft_epochs, batch_size=16, learning_rate=1e-3,
                 tau1=0.2, tau2=0.2, seed=0)

results = {}
for objective, init_name in (("mccl", "mtb"), ("ce", "mtb"), ("ce", "random"), ("lazy", "mtb")):
    f1s = []
    for seed in (0, 1, 2):
        t1 = time.time()
        init = mtb if init_name == "mtb" else new_random_checkpoint(world.documents, seed)
        cell = run_low_resource_cell(world.documents, world.pairs, world.inventory, splits,
                                     init, objective, init_name, 0.01, seed, ft)
        f1s.append(cell.f1)
        print(f"  {init_name}+{objective} seed={seed}: f1={cell.f1:.3f} k={cell.k} ({time.time()-t1:.0f}s)")
    results[(init_name, objective)] = sum(f1s) / len(f1s)

print()
for key, val in results.items():
    print(key, f"{val:.3f}")
print(f"\nmccl-ce gap: {100*(results[('mtb','mccl')]-results[('mtb','ce')]):.1f} pts")
print(f"mtb-random ce gap: {100*(results[('mtb','ce')]-results[('random','ce')]):.1f} pts")
print(f"total: {time.time()-t0:.0f}s")
