/**
 * Comment entry modal: a text area and a submit button. Comments are
 * append-only; there is no edit or delete in the UI by design.
 */
export function openCommentModal(
  title: string,
  onSubmit: (text: string) => Promise<void>,
): HTMLElement {
  const backdrop = document.createElement("div");
  backdrop.className = "modal-backdrop";

  const modal = document.createElement("div");
  modal.className = "comment-modal";

  const heading = document.createElement("h4");
  heading.textContent = `Comment on: ${title}`;

  const textarea = document.createElement("textarea");
  textarea.rows = 5;
  textarea.placeholder = "Notes, case ids, links to other records…";

  const submit = document.createElement("button");
  submit.className = "modal-submit";
  submit.textContent = "Save comment";

  const cancel = document.createElement("button");
  cancel.className = "modal-cancel";
  cancel.textContent = "Cancel";

  const close = () => backdrop.remove();
  cancel.addEventListener("click", close);
  backdrop.addEventListener("click", (event) => {
    if (event.target === backdrop) close();
  });

  submit.addEventListener("click", async () => {
    const text = textarea.value.trim();
    if (!text) return;
    submit.disabled = true;
    try {
      await onSubmit(text);
      close();
    } catch {
      submit.disabled = false; // leave the modal open so nothing typed is lost
    }
  });

  const actions = document.createElement("div");
  actions.className = "modal-actions";
  actions.append(cancel, submit);
  modal.append(heading, textarea, actions);
  backdrop.append(modal);
  document.body.append(backdrop);
  textarea.focus();
  return backdrop;
}
