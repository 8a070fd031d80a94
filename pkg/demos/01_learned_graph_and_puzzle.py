#!/usr/bin/env python3
"""Walk through the graph side of the pipeline: trainable joint embeddings,
top-delta cosine adjacency, community extraction, and one jigsaw move.

Run:  python3 demos/01_learned_graph_and_puzzle.py
"""
import numpy as np

from skelad.graph import build_adjacency, init_node_embeddings
from skelad.jigsaw import (class_count, extract_subgraphs, node_density,
                           shuffle_inter, shuffle_intra)
from skelad.rng import RngStream

np.set_printoptions(linewidth=120)

K, D, delta, eta = 12, 8, 3, 4
rng = RngStream(2024)

print(f"=== {K} joints, {D}-dim embeddings, out-degree {delta} ===")
V = init_node_embeddings(K, D, rng.split(0))
adj = build_adjacency(V, delta)
print("adjacency (row k -> its delta most similar joints):")
print(adj.A.astype(int))
print("row sums:", adj.A.sum(axis=1).astype(int), " (always delta)")

print(f"\n=== Girvan-Newman partition into eta={eta} subgraphs ===")
part = extract_subgraphs(adj, eta)
for c in range(eta):
    print(f"subgraph {c}: nodes {[int(n) for n in part.members(c)]}")
print("densities:", [node_density(part, adj, k) for k in range(K)])

print(f"\n=== inter-community move ({class_count('inter', eta)} classes) ===")
A_prime, move = shuffle_inter(adj, part, rng.split(1))
print(f"swapped subgraphs {move.subgraphs} -> class {move.class_id}")
print("density-ranked members:", move.ordered_nodes)
moved = [f"{i}->{p}" for i, p in enumerate(move.perm) if p != i]
print("relabeled nodes:", ", ".join(moved))
print("permuted adjacency still has row sums", A_prime.sum(axis=1).astype(int))

# pairwise swaps are an involution when the two subgraphs are equal-sized
if len(move.ordered_nodes[0]) == len(move.ordered_nodes[1]):
    assert np.array_equal(move.apply(A_prime), adj.A)
    print("applying the same move twice restores the original graph")

print(f"\n=== intra-community move ({class_count('intra', eta)} classes) ===")
A_intra, move2 = shuffle_intra(adj, part, rng.split(2))
print(f"rearranged subgraph {move2.subgraphs[0]} -> class {move2.class_id}")
print("members:", move2.ordered_nodes[0])
