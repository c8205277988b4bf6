#!/usr/bin/env python3
"""Persistent inference session for edgeprof.

Loads a GGUF model once with llama-cpp-python and answers one JSON request
per stdin line with one JSON reply per stdout line:

    request: {"step": 0, "prompt": "...", "image": null, "max_tokens": 256}
    reply:   {"text": "...", "tokens_in": 57, "tokens_out": 31}

Use it as a persistent-session backend:

    [backend]
    mode = "persistent-session"
    model = "models/model.gguf"
    command = ["python3", "scripts/llama_session.py", "--model", "{model}"]

Vision models additionally need --clip-model (a llava-style projector).
"""

import argparse
import json
import sys


def build(args):
    from llama_cpp import Llama

    kwargs = dict(model_path=args.model, n_ctx=args.n_ctx, n_threads=args.threads, verbose=False)
    if args.clip_model:
        from llama_cpp.llama_chat_format import Llava15ChatHandler

        kwargs["chat_handler"] = Llava15ChatHandler(clip_model_path=args.clip_model, verbose=False)
    return Llama(**kwargs)


def image_uri(path):
    import base64

    with open(path, "rb") as f:
        return "data:image/png;base64," + base64.b64encode(f.read()).decode()


def answer(llm, req):
    max_tokens = int(req.get("max_tokens") or 256)
    if req.get("image"):
        content = [
            {"type": "image_url", "image_url": {"url": image_uri(req["image"])}},
            {"type": "text", "text": req["prompt"]},
        ]
        out = llm.create_chat_completion(
            messages=[{"role": "user", "content": content}], max_tokens=max_tokens, temperature=0.0
        )
        text = out["choices"][0]["message"]["content"]
    else:
        out = llm.create_completion(req["prompt"], max_tokens=max_tokens, temperature=0.0)
        text = out["choices"][0]["text"]
    usage = out.get("usage") or {}
    return {
        "text": text,
        "tokens_in": usage.get("prompt_tokens"),
        "tokens_out": usage.get("completion_tokens"),
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", required=True)
    p.add_argument("--clip-model")
    p.add_argument("--n-ctx", type=int, default=4096)
    p.add_argument("--threads", type=int, default=None)
    args = p.parse_args()

    llm = build(args)
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            reply = answer(llm, json.loads(line))
        except Exception as e:  # report and keep serving
            reply = {"text": "", "error": f"{type(e).__name__}: {e}"}
        sys.stdout.write(json.dumps(reply) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
