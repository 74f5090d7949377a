#!/usr/bin/env python3
"""Regenerate the bundled data samples under data/.

The pretraining corpus and the summarization sample are functions extracted
from the local Python standard library. The generation, refinement and defect
samples are synthetic Java/C-like snippets drawn from fixed templates.
Everything is seeded, so rerunning the script reproduces the files exactly
for a given interpreter installation.
"""
import ast
import json
import os
import random
import sys
import textwrap

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")
STDLIB = "/usr/lib/python3.10"

CORPUS_MODULES = [
    "argparse.py", "ast.py", "base64.py", "bisect.py", "calendar.py", "cmd.py",
    "codecs.py", "collections/__init__.py", "configparser.py", "copy.py",
    "csv.py", "datetime.py", "difflib.py", "dis.py", "doctest.py",
    "email/utils.py", "enum.py", "fileinput.py", "fnmatch.py", "fractions.py",
    "ftplib.py", "functools.py", "getopt.py", "gettext.py", "glob.py",
    "gzip.py", "heapq.py", "hmac.py", "imaplib.py", "inspect.py",
    "ipaddress.py", "json/decoder.py", "json/encoder.py", "locale.py",
    "logging/__init__.py", "mailbox.py", "mimetypes.py", "netrc.py",
    "nntplib.py", "ntpath.py", "optparse.py", "pathlib.py", "pdb.py",
    "pickle.py", "pkgutil.py", "platform.py", "plistlib.py", "poplib.py",
    "posixpath.py", "pprint.py", "pydoc.py", "queue.py", "quopri.py",
    "random.py", "re.py", "sched.py", "shlex.py", "shutil.py", "smtplib.py",
    "socket.py", "statistics.py", "string.py", "subprocess.py", "tarfile.py",
    "tempfile.py", "textwrap.py", "threading.py", "timeit.py", "token.py",
    "tokenize.py", "traceback.py", "typing.py", "urllib/parse.py",
    "urllib/request.py", "uuid.py", "warnings.py", "wave.py", "weakref.py",
    "zipfile.py",
]
REPO_MODULES = [
    "http/client.py", "http/cookiejar.py", "http/server.py", "xml/dom/minidom.py",
    "xml/etree/ElementTree.py", "unittest/case.py", "unittest/mock.py",
    "asyncio/base_events.py", "asyncio/tasks.py", "concurrent/futures/_base.py",
]
SUMMARIZATION_MODULES = [
    "sqlite3/dbapi2.py", "multiprocessing/pool.py", "multiprocessing/managers.py",
    "importlib/_bootstrap_external.py", "distutils/util.py", "distutils/ccompiler.py",
    "lib2to3/pytree.py", "idlelib/editor.py", "tkinter/__init__.py",
    "email/message.py", "email/_header_value_parser.py", "turtle.py",
    "idlelib/pyshell.py", "tkinter/ttk.py", "xmlrpc/client.py", "xmlrpc/server.py",
    "ctypes/__init__.py", "distutils/sysconfig.py", "lib2to3/fixer_util.py",
    "curses/textpad.py", "dbm/dumb.py", "wsgiref/handlers.py", "sre_parse.py",
]


def first_paragraph(doc):
    lines = []
    for line in doc.strip().splitlines():
        if not line.strip():
            break
        lines.append(line.strip())
    return " ".join(lines)


def extract(module_paths, limit_len=1500):
    out = []
    for rel in module_paths:
        path = os.path.join(STDLIB, rel)
        if not os.path.exists(path):
            continue
        src = open(path, encoding="utf-8").read()
        tree = ast.parse(src)
        for node in ast.walk(tree):
            if not isinstance(node, ast.FunctionDef):
                continue
            seg = ast.get_source_segment(src, node)
            if seg is None:
                continue
            doc = ast.get_docstring(node)
            body0 = node.body[0]
            code = seg
            if doc is not None and isinstance(body0, ast.Expr):
                # drop the docstring lines from the code text
                lines = src.splitlines()
                start = node.lineno - 1
                code_lines = lines[start:node.end_lineno]
                ds, de = body0.lineno - 1 - start, body0.end_lineno - start
                code_lines = code_lines[:ds] + code_lines[de:]
                code = "\n".join(code_lines)
            code = textwrap.dedent(code).strip("\n")
            if not (60 <= len(code) <= limit_len):
                continue
            if len(code.splitlines()) < 2:
                continue
            out.append((rel, node.name, code, first_paragraph(doc) if doc else None))
    return out


def write_jsonl(path, rows):
    os.makedirs(os.path.dirname(path), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")


def corpus_rows(funcs, prefix, n_doc, n_nodoc, rng):
    with_doc = [f for f in funcs if f[3]]
    without = [f for f in funcs if not f[3]]
    rng.shuffle(with_doc)
    rng.shuffle(without)
    picked = with_doc[:n_doc] + without[:n_nodoc]
    rng.shuffle(picked)
    rows = []
    for i, (rel, name, code, doc) in enumerate(picked):
        mod = rel.replace("/", ".").replace(".py", "")
        rows.append({"id": f"{prefix}-{i:04d}-{mod}.{name}", "language": "python",
                     "code": code, "doc": doc})
    return rows


# ---------------------------------------------------------------- synthetic java

NAMES = ["a", "b", "x", "y", "n", "m", "k", "count", "total", "value", "left",
         "right", "size", "limit", "index", "acc", "num", "step"]
FUNCS = ["compute", "calc", "apply", "run", "get", "eval", "process", "handle",
         "solve", "check", "make", "find"]
FIELDS = ["count", "name", "width", "height", "size", "limit", "total", "speed"]


def pick(rng, pool, k):
    return rng.sample(pool, k)


def gen_java(rng):
    kind = rng.randrange(9)
    f = rng.choice(FUNCS) + rng.choice(["", "Value", "Result", "It", "All"])
    a, b, c = pick(rng, NAMES, 3)
    env = None
    if kind == 0:
        nl = f"returns the sum of {a} and {b} ."
        code = f"int {f} ( int {a} , int {b} ) {{ return {a} + {b} ; }}"
    elif kind == 1:
        nl = f"returns the larger of {a} and {b} ."
        code = (f"int {f} ( int {a} , int {b} ) {{ if ( {a} > {b} ) {{ return {a} ; }} "
                f"else {{ return {b} ; }} }}")
    elif kind == 2:
        nl = f"computes the factorial of {a} ."
        code = (f"int {f} ( int {a} ) {{ int {b} = 1 ; while ( {a} > 1 ) {{ {b} = {b} * {a} ; "
                f"{a} = {a} - 1 ; }} return {b} ; }}")
    elif kind == 3:
        nl = f"checks whether {a} is even ."
        code = f"boolean {f} ( int {a} ) {{ return {a} % 2 == 0 ; }}"
    elif kind == 4:
        nl = f"prints {a} to standard output ."
        code = f"void {f} ( String {a} ) {{ System . out . println ( {a} ) ; }}"
    elif kind == 5:
        nl = f"returns the absolute value of {a} ."
        code = (f"int {f} ( int {a} ) {{ if ( {a} < 0 ) {{ return - {a} ; }} return {a} ; }}")
    elif kind == 6:
        fld = rng.choice(FIELDS)
        env = f"int {fld} ; String label"
        nl = f"sets {fld} to the given {a} ."
        code = f"void {f} ( int {a} ) {{ this . {fld} = {a} ; }}"
    elif kind == 7:
        fld = rng.choice(FIELDS)
        env = f"int {fld}"
        nl = f"returns the current {fld} ."
        code = f"int {f} ( ) {{ return this . {fld} ; }}"
    else:
        nl = f"sums the integers from 1 to {a} ."
        code = (f"int {f} ( int {a} ) {{ int {b} = 0 ; int {c} = 1 ; while ( {c} <= {a} ) {{ "
                f"{b} = {b} + {c} ; {c} = {c} + 1 ; }} return {b} ; }}")
    return nl, env, code


def abstract_method(rng, medium):
    v = ["VAR_1", "VAR_2", "VAR_3", "VAR_4"]
    body = []
    if medium:
        body.append(f"int {v[2]} = 0 ;")
        body.append(f"while ( {v[2]} < {v[1]} ) {{ {v[3]} = {v[3]} + METHOD_2 ( {v[2]} ) ; "
                    f"{v[2]} = {v[2]} + 1 ; }}")
        body.append(f"if ( {v[3]} > {v[0]} ) {{ return {v[3]} - {v[0]} ; }}")
        body.append(f"return {v[3]} ;")
        sig = f"public int METHOD_1 ( int {v[0]} , int {v[1]} , int {v[3]} )"
    else:
        op = rng.choice(["+", "*", "-"])
        cmp = rng.choice([">", "<", "=="])
        k = rng.randrange(1, 10)
        body.append(f"if ( {v[0]} {cmp} {v[1]} ) {{ return {v[0]} {op} {v[1]} ; }}")
        body.append(rng.choice([f"return {v[1]} ;", f"return {v[1]} + {k} ;",
                                f"return METHOD_2 ( {v[1]} ) ;"]))
        sig = f"public int METHOD_1 ( int {v[0]} , int {v[1]} )"
    return sig + " { " + " ".join(body) + " }"


MUTATIONS = [(" > ", " < "), (" < ", " <= "), (" + ", " - "), (" - ", " + "),
             ("return VAR_1 ;", "return VAR_2 ;"), (" * ", " + "), ("= 0 ;", "= 1 ;")]


def mutate(rng, code):
    options = [(a, b) for a, b in MUTATIONS if a in code]
    a, b = rng.choice(options)
    idx = [i for i in range(len(code)) if code.startswith(a, i)]
    i = rng.choice(idx)
    return code[:i] + b + code[i + len(a):]


def gen_c(rng):
    buf, n, src = pick(rng, ["buf", "dst", "out", "data", "tmp", "p"], 1)[0], \
        rng.choice(["len", "n", "size", "count"]), rng.choice(["src", "in", "input", "s"])
    fn = rng.choice(["copy_", "read_", "parse_", "fill_", "load_"]) + rng.choice(["name", "header", "packet", "block", "line"])
    if rng.random() < 0.5:
        label = 1
        body = rng.choice([
            f"char {buf} [ 16 ] ; strcpy ( {buf} , {src} ) ; return {buf} [ 0 ] ;",
            f"char * {buf} = malloc ( {n} ) ; memcpy ( {buf} , {src} , {n} + 1 ) ; return 0 ;",
            f"int i ; for ( i = 0 ; i <= {n} ; i ++ ) {{ {buf} [ i ] = {src} [ i ] ; }} return i ;",
            f"char * {buf} = malloc ( {n} ) ; free ( {buf} ) ; {buf} [ 0 ] = 0 ; return 1 ;",
        ])
    else:
        label = 0
        body = rng.choice([
            f"char {buf} [ 16 ] ; strncpy ( {buf} , {src} , sizeof ( {buf} ) - 1 ) ; return {buf} [ 0 ] ;",
            f"char * {buf} = malloc ( {n} + 1 ) ; if ( ! {buf} ) return - 1 ; memcpy ( {buf} , {src} , {n} ) ; return 0 ;",
            f"int i ; for ( i = 0 ; i < {n} ; i ++ ) {{ {buf} [ i ] = {src} [ i ] ; }} return i ;",
            f"char * {buf} = malloc ( {n} ) ; if ( {buf} == NULL ) return - 1 ; free ( {buf} ) ; return 1 ;",
        ])
    return f"static int {fn} ( char * {src} , int {n} ) {{ {body} }}", label


def manifest(path, counts):
    with open(path, "w") as f:
        for k, v in counts:
            f.write(f"{k}={v}\n")


def main():
    rng = random.Random(20210601)
    corpus = extract(CORPUS_MODULES)
    write_jsonl(os.path.join(ROOT, "corpus", "sample.jsonl"),
                corpus_rows(corpus, "csn", 900, 100, rng))
    repos = extract(REPO_MODULES)
    write_jsonl(os.path.join(ROOT, "corpus", "repos.jsonl"),
                corpus_rows(repos, "gh", 150, 50, rng))

    summ = [f for f in extract(SUMMARIZATION_MODULES, 800) if f[3] and len(f[3]) < 200]
    rng.shuffle(summ)
    rows = [{"id": f"sum-{i:04d}", "language": "python", "code": c, "doc": d}
            for i, (_, _, c, d) in enumerate(summ[:350])]
    train, test = rows[:300], rows[300:350]
    # a few doc-less records exercise the skip rule
    for i in range(5):
        train.insert(i * 50, {"id": f"sum-nodoc-{i}", "language": "python",
                              "code": "def f():\n    return " + str(i), "doc": None})
    d = os.path.join(ROOT, "tasks", "summarization")
    write_jsonl(os.path.join(d, "train.jsonl"), train)
    write_jsonl(os.path.join(d, "test.jsonl"), test)
    manifest(os.path.join(d, "manifest"), [("train", len(train) - 5), ("train.skipped", 5),
                                            ("test", len(test)), ("test.skipped", 0)])

    gen_rows = []
    seen = set()
    while len(gen_rows) < 240:
        nl, env, code = gen_java(rng)
        if code in seen:
            continue
        seen.add(code)
        row = {"id": f"gen-{len(gen_rows):04d}", "nl": nl, "code": code}
        if env is not None:
            row["env"] = env
        gen_rows.append(row)
    d = os.path.join(ROOT, "tasks", "generation")
    write_jsonl(os.path.join(d, "train.jsonl"), gen_rows[:200])
    write_jsonl(os.path.join(d, "test.jsonl"), gen_rows[200:])
    manifest(os.path.join(d, "manifest"), [("train", 200), ("test", 40)])

    for size, medium in (("small", False), ("medium", True)):
        rows = []
        for i in range(180):
            fixed = abstract_method(rng, medium)
            rows.append({"id": f"ref-{size}-{i:04d}", "buggy": mutate(rng, fixed), "fixed": fixed})
        d = os.path.join(ROOT, "tasks", "refinement", size)
        write_jsonl(os.path.join(d, "train.jsonl"), rows[:150])
        write_jsonl(os.path.join(d, "test.jsonl"), rows[150:])
        manifest(os.path.join(d, "manifest"), [("train", 150), ("test", 30)])

    rows = []
    for i in range(250):
        code, label = gen_c(rng)
        rows.append({"id": f"def-{i:04d}", "code": code, "label": label})
    d = os.path.join(ROOT, "tasks", "defect")
    write_jsonl(os.path.join(d, "train.jsonl"), rows[:200])
    write_jsonl(os.path.join(d, "test.jsonl"), rows[200:])
    manifest(os.path.join(d, "manifest"), [("train", 200), ("test", 50)])


if __name__ == "__main__":
    sys.exit(main())
